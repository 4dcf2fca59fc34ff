"""
Port-Hamiltonian refinement of policy actions
=============================================

With the exact kinetic energy of a point mass the physics pass reproduces the
bicycle step, so refined actions equal the proposed ones. A learned energy
changes them, and the change is what the network learned about the vehicle.
"""

import numpy as np

from pidt.phnn import HamiltonianNet, KineticEnergy, PhnnConfig, hamiltonian, integrate, refine

H0 = KineticEnergy(mass=1.0)

# Uniform acceleration from rest: q = t^2 / 2 after one second.
qs, ps = integrate([0.0, 0.0], [0.0, 0.0], [1.0, 0.0], n=10, dt=0.1, H=H0)
print("q(1 s) =", qs[-1], "p(1 s) =", ps[-1])

# Without forcing the energy is conserved to round-off.
qs, ps = integrate([0.0, 0.0], [3.0, -1.0], [0.0, 0.0], n=90, dt=0.1, H=H0)
e = hamiltonian(qs, ps, H0)
print(f"energy drift over 90 steps: {np.abs(e - e[0]).max():.1e}")

rng = np.random.default_rng(0)
states = np.stack([rng.uniform(-20, 20, 5), rng.uniform(-20, 20, 5), rng.uniform(-3, 3, 5),
                   rng.uniform(2, 15, 5)], -1)
actions = np.stack([rng.uniform(-3, 3, 5), rng.uniform(-0.1, 0.1, 5)], -1)
print("surrogate deviation:", np.abs(refine(actions, states, H0) - actions).max())

# A network with a non-zero residual (as after training) moves the actions.
net = HamiltonianNet(PhnnConfig(hidden=(16, 16)))
net.last.w.data[...] = rng.normal(scale=0.5, size=net.last.w.shape)
print("learned-energy refinement:\n", np.round(refine(actions, states, net), 4))
