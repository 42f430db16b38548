"""Desk-scale electromagnetic-transient simulation of the four-terminal grid."""
