# Stochastic Simulation
