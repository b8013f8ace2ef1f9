from airmimo.cli import run

run()
