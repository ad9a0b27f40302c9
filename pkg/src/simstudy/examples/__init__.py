"""Three end-to-end studies built on the engine: Poisson rate estimation
(``poisson``), simulation-based power (``power``), and regression standard
error comparison (``regression``). Each module runs as a program via
``python -m simstudy.examples.<name>``."""
