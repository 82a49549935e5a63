# Domain package: manifold, transport and scenario types.
