"""Numerical toolkit for the one-phase Stefan problem in the flat regime.

Front-tracking simulation, closed-form barriers, the partial hodograph
transform, a linear solver with an oblique dynamic boundary condition and the
improvement-of-flatness iteration.
"""

__version__ = "0.1.0"
