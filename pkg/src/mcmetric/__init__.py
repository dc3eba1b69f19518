"""Distance metric learning by Metropolis Monte Carlo on the NCA energy."""
