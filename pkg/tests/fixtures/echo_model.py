"""Stand-in external wave model for adapter tests.

Usage: echo_model.py FIXTURE [--exit CODE] [--negative] [--no-output]

Copies the FIXTURE matrix to ``waves.txt`` in the working directory after
checking that the exchange inputs exist.
"""

import shutil
import sys
from pathlib import Path


def main(argv):
    fixture = Path(argv[0])
    if "--exit" in argv:
        code = int(argv[argv.index("--exit") + 1])
        print("simulated solver failure", file=sys.stderr)
        return code
    for name in ("domain.txt", "obstacles.txt"):
        if not Path(name).exists():
            print(f"missing {name}", file=sys.stderr)
            return 3
    if "--no-output" in argv:
        return 0
    shutil.copyfile(fixture, "waves.txt")
    if "--negative" in argv:
        text = Path("waves.txt").read_text().split("\n")
        first = text[0].split()
        first[0] = "-1.0"
        text[0] = " ".join(first)
        Path("waves.txt").write_text("\n".join(text))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
