"""Time-fractional poroelasticity in fractured and multicontinuum media:
fine-grid reference solver, multiscale (GMsFEM) coarse solver, and an
experiment harness for error-vs-basis-count studies."""

__version__ = "0.1.0"
