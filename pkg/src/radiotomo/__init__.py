"""Variational Bayes radio tomography."""
