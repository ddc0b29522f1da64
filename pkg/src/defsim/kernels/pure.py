"""Pure numpy implementations of the hot per-pipeline kernels.

All functions operate in place on (K+1, P) coefficient slabs or length-P
state arrays for a single pipeline. Accumulation order is fixed (ascending
convolution index) so the compiled backend can reproduce results bitwise.
"""

import numpy as np

BACKEND = "pure"


def conv_order_update(m, pi, mm, rpi, order):
    """Fill row ``order`` of the running product/reciprocal slabs.

    mm[j]  = sum_{i<=j} m[i] m[j-i]          (coefficients of m^2)
    rpi[0] = 1/pi[0];  rpi[j] = -(sum_{i<j} rpi[i] pi[j-i]) / pi[0]
    """
    if order == 0:
        mm[0] = m[0] * m[0]
        rpi[0] = 1.0 / pi[0]
        return
    acc = m[0] * m[order]
    for i in range(1, order + 1):
        acc = acc + m[i] * m[order - i]
    mm[order] = acc
    acc = rpi[0] * pi[order]
    for i in range(1, order):
        acc = acc + rpi[i] * pi[order - i]
    rpi[order] = -acc * rpi[0]


def pipe_interior_order(pi, m, mm, rpi, sign0, k, adv_pi, adv_m, fric):
    """Order-k coefficients at the interior points of one pipeline.

    pi[k, n] = -(adv_pi / k) (m[k-1, n+1] - m[k-1, n-1])
    m[k, n]  = -(adv_m / k) (pi[k-1, n+1] - pi[k-1, n-1]) - (fric / k) z[k-1, n]

    with z the frozen-sign coefficient of m|m|/pi built from the running
    slabs: z[j, n] = sign0[n] * sum_i mm[i, n] rpi[j-i, n].
    """
    j = k - 1
    z = mm[0, 1:-1] * rpi[j, 1:-1]
    for i in range(1, j + 1):
        z = z + mm[i, 1:-1] * rpi[j - i, 1:-1]
    z = sign0[1:-1] * z
    inv_k = 1.0 / k
    pi[k, 1:-1] = (-adv_pi * inv_k) * (m[j, 2:] - m[j, :-2])
    m[k, 1:-1] = (-adv_m * inv_k) * (pi[j, 2:] - pi[j, :-2]) - (fric * inv_k) * z


def moc_interior_step(pi_old, m_old, pi_new, m_new, c_over_s, s_over_c, fric_quarter_dt):
    """One characteristics step for the interior points of one pipeline.

    Along dl/dt = +/-c the advected invariants w1 = (S pi + c m)/(2c) and
    w2 = (-S pi + c m)/(2c) each decay by half the friction term,
    integrated here with the implicit trapezoid. The new pressure follows
    in closed form from w1 - w2; the remaining scalar equation
    m + beta m|m| = rhs has the explicit sign-stable root
    m = 2 rhs / (1 + sqrt(1 + 4 beta |rhs|)).

    Returns False when a nonpositive pressure appears (domain failure).
    """
    # Doubled invariants W1 = S pi / c + m, W2 = -S pi / c + m keep the
    # algebra free of 1/(2c) factors.
    w1 = pi_old * s_over_c + m_old
    w2 = -pi_old * s_over_c + m_old
    phi = fric_quarter_dt * m_old * np.abs(m_old) / pi_old
    a = w1[:-2] - phi[:-2]
    b = w2[2:] - phi[2:]
    pi_n = 0.5 * c_over_s * (a - b)
    if np.any(pi_n <= 0.0):
        return False
    rhs = 0.5 * (a + b)
    beta = fric_quarter_dt / pi_n
    m_n = 2.0 * rhs / (1.0 + np.sqrt(1.0 + 4.0 * beta * np.abs(rhs)))
    pi_new[1:-1] = pi_n
    m_new[1:-1] = m_n
    return True
