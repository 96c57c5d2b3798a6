"""
Numerical modules: environments, clusters, solvers, correctors, walks,
continuum references and the exclusion process.
"""
