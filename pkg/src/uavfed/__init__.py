"""UAV-assisted federated learning co-simulator.

Energy-optimal trajectory/power/frequency allocation via block-coordinate
descent over convexified subproblems, a digital-twin deviation layer, and
a commitment-based verifiable aggregation protocol with a constant-size
proof, plus the federated training loop and CLI that tie them together.
"""

__version__ = "0.1.0"
