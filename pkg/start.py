#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Gridshare Simulator - Main Entry Point

Launcher that runs the CLI from a source checkout without installing.

Usage:
    python start.py [COMMAND] [OPTIONS]

Examples:
    python start.py --help
    python start.py run gridshare-sim/resources/scenarios/ieee13_s1.json
    python start.py sweep gridshare-sim/resources/scenarios/ieee13_s1.json --scales 0:2:21
"""

import sys
from pathlib import Path
import codecs

# Ensure UTF-8 encoding on Windows
if sys.platform == 'win32':
    try:
        sys.stdout.reconfigure(encoding='utf-8')
        sys.stderr.reconfigure(encoding='utf-8')
    except AttributeError:
        sys.stdout = codecs.getwriter('utf-8')(sys.stdout.buffer, 'strict')
        sys.stderr = codecs.getwriter('utf-8')(sys.stderr.buffer, 'strict')

# Add the gridshare-sim directory to Python path
project_root = Path(__file__).parent
source_dir = project_root / 'gridshare-sim'

if source_dir.exists():
    sys.path.insert(0, str(source_dir))
else:
    print(f"Error: Could not find 'gridshare-sim' directory at {source_dir}")
    print("Please ensure you're running this script from the project root directory.")
    sys.exit(1)


def check_dependencies():
    """Check if required dependencies are installed."""
    missing_deps = []

    required_packages = {
        'numpy': 'numpy',
        'scipy': 'scipy',
        'networkx': 'networkx',
        'pandas': 'pandas',
        'rich': 'rich',
        'click': 'click',
        'yaml': 'pyyaml',
        'tqdm': 'tqdm',
    }

    for import_name, package_name in required_packages.items():
        try:
            __import__(import_name)
        except ImportError:
            missing_deps.append(package_name)

    if missing_deps:
        print("\n⚠️  Missing required dependencies:")
        for dep in missing_deps:
            print(f"   - {dep}")
        print("\nPlease install: pip install -r requirements.txt")
        return False

    return True


def main():
    """Main entry point."""
    if not check_dependencies():
        sys.exit(1)

    try:
        from core.cli_engine import main as cli_main
        cli_main()

    except KeyboardInterrupt:
        print("\n\n⚠️  Interrupted by user")
        sys.exit(0)

    except ImportError as e:
        print(f"\n❌ Import error: {e}")
        print("\nTroubleshooting:")
        print("1. Ensure dependencies installed: pip install -e .")
        print("2. Check you're in the correct directory")
        print("3. Verify 'gridshare-sim' directory exists")
        sys.exit(1)


if __name__ == '__main__':
    main()
