"""Scaling bounds."""


def amdahl_speedup(serial_fraction, m):
    """Best possible speed-up on ``m`` nodes when ``serial_fraction`` of the work is sequential."""
    if not 0.0 <= serial_fraction <= 1.0:
        raise ValueError(f"serial_fraction must lie in [0, 1], got {serial_fraction}")
    if m < 1:
        raise ValueError(f"need at least one node, got {m}")
    return 1.0 / (serial_fraction + (1.0 - serial_fraction) / m)
