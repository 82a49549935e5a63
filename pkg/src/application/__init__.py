# Application layer: numerics and scenario orchestration.
