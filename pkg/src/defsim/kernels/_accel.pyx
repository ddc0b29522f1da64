# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the pure numpy kernels.

Loop nests mirror the accumulation order of defsim.kernels.pure so both
backends produce bitwise-identical results.
"""

from libc.math cimport fabs, sqrt

BACKEND = "compiled"


def conv_order_update(double[:, :] m, double[:, :] pi,
                      double[:, :] mm, double[:, :] rpi, int order):
    cdef Py_ssize_t p = m.shape[1]
    cdef Py_ssize_t n, i
    cdef double acc
    if order == 0:
        for n in range(p):
            mm[0, n] = m[0, n] * m[0, n]
            rpi[0, n] = 1.0 / pi[0, n]
        return
    for n in range(p):
        acc = m[0, n] * m[order, n]
        for i in range(1, order + 1):
            acc = acc + m[i, n] * m[order - i, n]
        mm[order, n] = acc
    for n in range(p):
        acc = rpi[0, n] * pi[order, n]
        for i in range(1, order):
            acc = acc + rpi[i, n] * pi[order - i, n]
        rpi[order, n] = -acc * rpi[0, n]


def pipe_interior_order(double[:, :] pi, double[:, :] m,
                        double[:, :] mm, double[:, :] rpi,
                        double[:] sign0, int k,
                        double adv_pi, double adv_m, double fric):
    cdef Py_ssize_t p = pi.shape[1]
    cdef Py_ssize_t n, i
    cdef int j = k - 1
    cdef double inv_k = 1.0 / k
    cdef double z
    for n in range(1, p - 1):
        z = mm[0, n] * rpi[j, n]
        for i in range(1, j + 1):
            z = z + mm[i, n] * rpi[j - i, n]
        z = sign0[n] * z
        pi[k, n] = (-adv_pi * inv_k) * (m[j, n + 1] - m[j, n - 1])
        m[k, n] = (-adv_m * inv_k) * (pi[j, n + 1] - pi[j, n - 1]) - (fric * inv_k) * z


def moc_interior_step(double[:] pi_old, double[:] m_old,
                      double[:] pi_new, double[:] m_new,
                      double c_over_s, double s_over_c, double fric_quarter_dt):
    cdef Py_ssize_t p = pi_old.shape[0]
    cdef Py_ssize_t n
    cdef double a, b, pin, rhs, beta
    cdef double phi_lo, phi_hi
    for n in range(1, p - 1):
        phi_lo = fric_quarter_dt * m_old[n - 1] * fabs(m_old[n - 1]) / pi_old[n - 1]
        phi_hi = fric_quarter_dt * m_old[n + 1] * fabs(m_old[n + 1]) / pi_old[n + 1]
        a = pi_old[n - 1] * s_over_c + m_old[n - 1] - phi_lo
        b = -pi_old[n + 1] * s_over_c + m_old[n + 1] - phi_hi
        pin = 0.5 * c_over_s * (a - b)
        if pin <= 0.0:
            return False
        rhs = 0.5 * (a + b)
        beta = fric_quarter_dt / pin
        pi_new[n] = pin
        m_new[n] = 2.0 * rhs / (1.0 + sqrt(1.0 + 4.0 * beta * fabs(rhs)))
    return True
