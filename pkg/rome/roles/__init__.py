"""Registered model roles compared by fit-moe, evaluate and tune."""
