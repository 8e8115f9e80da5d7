"""starklab: numerical laboratory for Stark-ladder spectral asymptotics.

Modules
-------
potential   Fourier model of the periodic potential, cubic exponential sums
phase       operator constants, Liouville phase, resonance grids
oscillatory oscillatory-integral oracles and window asymptotics
ode         direct Prufer integration of the continuous problem
turning     Hermite functions of imaginary order, connection matrices
discrete    window recursion, adiabatic increments, closed transfer chain
model       model cocycle: Lyapunov growth, decaying solution, subordinacy
cli         run configs, experiment orchestration, CSV/JSON emission
"""

__version__ = "0.1.0"
