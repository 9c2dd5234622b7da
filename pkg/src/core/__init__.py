"""
Core modules for vdt-qoe.

This package contains core functionality including configuration,
artifact persistence, constants and custom exceptions.
"""
