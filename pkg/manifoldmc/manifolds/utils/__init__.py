# Numerical library: manifolds, sampler, integrator, statistics
