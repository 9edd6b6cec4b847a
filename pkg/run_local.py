#!/usr/bin/env python3
"""
Local demo script for nvdephase.

Simulates an FID trace, fits it and prints the report, using the command line
exactly as a user would.
"""
import os
import subprocess
import sys
from pathlib import Path

DEMO_DIR = "results/demo"
DEMO_ITERS = "4000"


def check_env_file():
    """
    Warn if there is no .env file; the defaults then apply.
    """
    if not os.path.exists(".env"):
        print("Note: no .env file found, using default settings (see .env.example)")


def run_command(*args: str) -> bool:
    """
    Run one nvdephase command.

    Returns:
        True if the command exited with 0.
    """
    command = [sys.executable, "-m", "cli.main", *args, "--out", DEMO_DIR]
    print(f"$ nvdephase {' '.join(args)}")
    result = subprocess.run(command)
    if result.returncode != 0:
        print(f"Command failed with exit code {result.returncode}")
        return False
    return True


def main():
    """
    Main entry point.
    """
    check_env_file()

    # Ensure logs directory exists
    Path("logs").mkdir(exist_ok=True)

    try:
        if not run_command("simulate"):
            return
        if not run_command("fit-fid", "--iters", DEMO_ITERS, "--force"):
            return
        run_command("report")
    except KeyboardInterrupt:
        print("\nDemo stopped by user")


if __name__ == "__main__":
    main()
