"""G2V/V2G supervision with an incremental MPC inverter controller."""
