"""
Shared pytest configuration for nvdephase.
"""
import os

# Keep test runs from writing log files into the working tree
os.environ.setdefault("NVDEPH_LOG_TO_FILE", "false")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running round-trip fits and large oracles")
