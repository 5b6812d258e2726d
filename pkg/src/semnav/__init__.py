"""Path planning over lossy, fidelity-controlled map transmission."""

__version__ = "0.1.0"
