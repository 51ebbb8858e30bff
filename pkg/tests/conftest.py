import os
import sys
import textwrap
from pathlib import Path

import pytest

FAKE_GCC = textwrap.dedent(
    """\
    #!{python}
    # Stand-in compiler: writes a deterministic binary to the -o path.
    import os, sys
    args = sys.argv[1:]
    if os.environ.get("FAKE_GCC_FAIL"):
        sys.exit(4)
    out = args[args.index("-o") + 1] if "-o" in args else "a.out"
    if os.environ.get("FAKE_GCC_SKIP_OUTPUT"):
        sys.exit(0)
    with open(out, "wb") as fh:
        fh.write(b"ELF:" + " ".join(a for a in args if a != out).encode())
    """
)


@pytest.fixture
def fake_gcc(tmp_path: Path) -> dict[str, str]:
    """Environment whose PATH resolves ``gcc`` to a scripted fake compiler."""
    bindir = tmp_path / "bin"
    bindir.mkdir()
    script = bindir / "gcc"
    script.write_text(FAKE_GCC.format(python=sys.executable))
    script.chmod(0o755)
    (tmp_path / "hello-world.c").write_text('int main(void) { return 0; }\n')
    return {"PATH": f"{bindir}{os.pathsep}{os.environ.get('PATH', '')}"}


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request: pytest.FixtureRequest) -> list[str]:
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
