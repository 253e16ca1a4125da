"""slsim — structured-light depth sensor simulator."""

__version__ = "0.1.0"
