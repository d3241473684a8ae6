"""Multi-objective risk-averse two-stage stochastic programming."""
