"""Shared systems and scenarios for the test suite: built from the bundled
fixture files so the tests exercise exactly what ships."""

from defsim import io
from defsim.fixtures import bundled_path


def single_pipe_system():
    return io.load_network(bundled_path("single_pipe.network.json"))


def single_pipe_scenario():
    return io.load_scenario(bundled_path("single_pipe.scenario.json"))


def single_pipe_steady_scenario():
    return io.load_scenario(bundled_path("single_pipe_steady.scenario.json"))


def coupled_demo_system():
    return io.load_network(bundled_path("coupled_demo.network.json"))


def coupled_demo_scenario():
    return io.load_scenario(bundled_path("coupled_demo.scenario.json"))


def loop_triangle_system():
    return io.load_network(bundled_path("loop_triangle.network.json"))


def loop_triangle_scenario():
    return io.load_scenario(bundled_path("loop_triangle.scenario.json"))
