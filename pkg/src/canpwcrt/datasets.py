"""Built-in message sets in the JSON file format."""

# Tindell's simplification of the SAE benchmark at 125 kbit/s:
# (priority, C bits, T ms, D ms); E is 13 bits for every frame.
_SAE_ROWS = [
    (1, 62, 1000, 5),
    (2, 72, 5, 5),
    (3, 62, 5, 5),
    (4, 72, 5, 5),
    (5, 62, 5, 5),
    (6, 72, 5, 5),
    (7, 112, 10, 10),
    (8, 62, 10, 10),
    (9, 72, 10, 10),
    (10, 72, 10, 10),
    (11, 62, 100, 100),
    (12, 92, 100, 100),
    (13, 62, 100, 100),
    (14, 62, 100, 100),
    (15, 82, 1000, 1000),
    (16, 62, 1000, 1000),
    (17, 62, 1000, 1000),
]

SAE = {
    "name": "sae",
    "bus_speed_bps": 125_000,
    "lambda_per_bit": 1e-5,
    "retry_residual": 2.7e-15,
    "frames": [
        {"id": f"m{p}", "priority": p, "C_bits": c, "E_bits": 13, "T_ms": t, "D_ms": d, "J_ms": 0}
        for p, c, t, d in _SAE_ROWS
    ],
}

# Three-frame illustration with hand-set retry distributions.  One time
# unit per bit (bus_speed 1000 bit/s makes 1 bit == 1 ms).  The explicit
# retry masses take precedence over lambda, which only records the rate
# that gives P(no error) = 0.9 for a one-bit frame.
EXAMPLE3 = {
    "name": "example3",
    "bus_speed_bps": 1000,
    "lambda_per_bit": 0.10536051565782628,
    "retry_limit": 2,
    "frames": [
        {"id": "tau0", "priority": 0, "C_bits": 1, "T_bits": 6, "D_bits": 6, "E_bits": 1,
         "retry_masses": [0.9, 0.09, 0.01]},
        {"id": "tau1", "priority": 1, "C_bits": 1, "T_bits": 12, "D_bits": 12, "E_bits": 0,
         "retry_masses": [0.9, 0.09, 0.01]},
        {"id": "tau2", "priority": 2, "C_bits": 2, "T_bits": 20, "D_bits": 20, "E_bits": 0,
         "retry_masses": [0.9, 0.09, 0.01]},
    ],
}

DATASETS = {"sae": SAE, "example3": EXAMPLE3}
