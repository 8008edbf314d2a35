"""Traffic-signal-control reality-gap laboratory.

A vectorized single-intersection simulator (Krauss, IDM and Wiedemann-74
car following, an 8-phase safety automaton, camera-style sensing with
noise) plus a numpy policy-gradient stack (PPO, domain randomization,
first- and second-order MAML) and an experiment harness.
"""
__version__ = "0.1.0"
