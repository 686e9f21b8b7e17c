"""Numerical modules: matrixcore, permanent, distmodels, interferometer, bunching, counterexample, oracle."""
