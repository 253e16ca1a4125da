"""
app.py — slsim entry point
Run with: python app.py <simulate|benchmark|pattern|inspect|config> [options]
"""
import os, sys
_root = os.path.dirname(os.path.abspath(__file__))
if _root not in sys.path:
    sys.path.insert(0, _root)

from dotenv import load_dotenv
load_dotenv()

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
