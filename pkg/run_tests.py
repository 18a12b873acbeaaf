#!/usr/bin/env python3
"""
Test runner for wflab: `python run_tests.py <command>`.
"""
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).parent

COMMANDS = {
    "all": ("Run every test, acceptance-size runs included", [["pytest", "tests/"]]),
    "unit": ("Run unit tests only", [["pytest", "tests/unit/"]]),
    "integration": ("Run integration tests without the slow runs", [["pytest", "tests/integration/", "-m", "not slow"]]),
    "slow": ("Run the acceptance-size runs only", [["pytest", "tests/", "-m", "slow"]]),
    "quick": ("Run everything except slow runs", [["pytest", "tests/", "-m", "not slow"]]),
    "ldp": ("Run the numerical library tests", [["pytest", "tests/unit/ldp/"]]),
    "api": ("Run API endpoint tests", [["pytest", "tests/integration/test_api_endpoints.py"]]),
    "lint": ("Lint with ruff", [["ruff", "check", "wflab/", "tests/"]]),
    "format": ("Format with black", [["black", "wflab/", "tests/", "--line-length=120"]]),
    "check": ("Lint, then unit tests", [["ruff", "check", "wflab/"], ["pytest", "tests/unit/"]]),
}


def run_command(cmd) -> bool:
    label = " ".join(cmd)
    print(f"\n{'=' * 60}\n{label}\n{'=' * 60}")
    returncode = subprocess.run(cmd, cwd=ROOT).returncode
    print(f"{'✅' if returncode == 0 else '❌'} {label} (exit {returncode})")
    return returncode == 0


def usage() -> str:
    lines = ["Usage: python run_tests.py <command>", "", "Commands:"]
    lines += [f"  {name:<12} {description}" for name, (description, _) in COMMANDS.items()]
    return "\n".join(lines)


def main():
    command = sys.argv[1].lower() if len(sys.argv) > 1 else None
    if command not in COMMANDS:
        if command is not None:
            print(f"Unknown command: {command}\n")
        print(usage())
        sys.exit(0 if command is None else 1)

    _, steps = COMMANDS[command]
    results = [run_command(cmd) for cmd in steps]
    if all(results):
        print("\n🎉 All steps passed")
        sys.exit(0)
    print(f"\n💥 {results.count(False)} of {len(results)} steps failed")
    sys.exit(1)


if __name__ == "__main__":
    main()
