"""Per-session interpreter loop, run as a child process.

Speaks newline-delimited JSON over stdin/stdout: each request is
``{"code": ...}``, each reply ``{"status", "stdout", "stderr"}``. User
code shares one namespace across requests (variables persist) and its
stdout/stderr are captured, so the protocol channel stays clean. The
parent enforces timeouts by killing the whole process; a fresh one is
started for the next request.

Started with ``python -u runner.py [allowlist.json]``; the optional
argument is a JSON list of importable module names (an import allowlist).
"""

from __future__ import annotations

import builtins
import contextlib
import io
import json
import sys
import traceback


def install_import_allowlist(allowed: list[str]) -> None:
    allowed_set = set(allowed)
    real_import = builtins.__import__

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        root = name.split(".")[0]
        if root not in allowed_set:
            raise ImportError(f"import of {name!r} is not allowed in this sandbox")
        return real_import(name, globals, locals, fromlist, level)

    builtins.__import__ = guarded_import


def serve() -> None:
    if len(sys.argv) > 1:
        install_import_allowlist(json.loads(sys.argv[1]))
    namespace: dict = {"__name__": "__main__"}
    protocol_out = sys.stdout
    for line in sys.stdin:
        if not line.strip():
            continue
        request = json.loads(line)
        captured_out, captured_err = io.StringIO(), io.StringIO()
        status = "ok"
        with contextlib.redirect_stdout(captured_out), contextlib.redirect_stderr(captured_err):
            try:
                exec(compile(request["code"], "<session>", "exec"), namespace)
            except BaseException:
                status = "error"
                traceback.print_exc(file=captured_err)
        reply = {
            "status": status,
            "stdout": captured_out.getvalue(),
            "stderr": captured_err.getvalue(),
        }
        protocol_out.write(json.dumps(reply, ensure_ascii=False) + "\n")
        protocol_out.flush()


if __name__ == "__main__":
    serve()
