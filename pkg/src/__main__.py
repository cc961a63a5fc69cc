"""python -m src で CLI を実行"""
import sys

from src.cli import main

sys.exit(main())
