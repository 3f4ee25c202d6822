"""MDPs perturbed by an exogenous marked event stream.

Modules:

* ``event_process`` -- discrete-time marked Hawkes process
* ``mdp_core`` -- augmented states, truncation, finite chain and pendulum environments
* ``bounds`` -- tail sums and the truncation / sample-complexity bounds
* ``oracle`` -- exact dynamic programming on enumerated finite chains
* ``policy_iter`` -- window policy iteration (exact and Monte Carlo)
* ``lstd`` -- pathwise LSTD with linear features
* ``experiment`` -- the pendulum evaluation sweep
"""

__version__ = "0.1.0"
