"""Event-driven simulation and Monte Carlo checks of second-order Boltzmann-Gibbs estimates."""

__version__ = "0.1.0"
