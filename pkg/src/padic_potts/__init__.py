"""p-adic quasi Gibbs measures for the countable-state Potts model on Cayley trees."""
__version__ = "0.1.0"
