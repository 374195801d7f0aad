"""
orthovae Test Suite

Unit and integration tests for the orthovae package.
"""
