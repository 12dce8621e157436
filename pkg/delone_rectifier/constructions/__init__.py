"""
Constructive maps: the dyadic Jacobian flattener and lattice rectification.
"""
