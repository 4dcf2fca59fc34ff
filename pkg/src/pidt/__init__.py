"""Physics-informed decision-transformer driving at desk scale.

Subpackages and modules:

* :mod:`pidt.scenario` synthetic scenarios and their file format
* :mod:`pidt.dynamics`, :mod:`pidt.simulator`, :mod:`pidt.rewards` the closed-loop world
* :mod:`pidt.replay` transition, trajectory and priority buffers
* :mod:`pidt.nncore` a small float64 autodiff core
* :mod:`pidt.policy`, :mod:`pidt.phnn` the decision transformer and port-Hamiltonian refiner
* :mod:`pidt.trainer`, :mod:`pidt.metrics`, :mod:`pidt.cli` training, evaluation, command line
"""

__version__ = "0.1.0"
