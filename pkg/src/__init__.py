"""
vdt-qoe

Virtual drive test pipeline for adaptive-streaming QoE: learn the typical MOS
pattern of a benchmark session, predict MOS from radio KPIs, flag anomalous
sessions and explain predictions with exact tree attributions.
"""

__version__ = "1.0.0"
__author__ = "vdt-qoe Team"
