"""Minimal test runner speaking the shim protocol, for tests only.

Reads one request from stdin and writes one response to stdout.
Test hooks: a candidate containing "# shim: hang" never answers,
"# shim: garbage" answers with non-JSON, "# shim: bad-version" answers
with shim_version 99.
"""
import contextlib
import io
import json
import signal
import sys
import time


class _Timeout(Exception):
    pass


def _alarm(_signum, _frame):
    raise _Timeout()


def _run_test(code, ns, test):
    kind = test["kind"]
    if kind == "assertion":
        exec(test["payload"], ns)
        return True, None
    out = io.StringIO()
    old_stdin = sys.stdin
    sys.stdin = io.StringIO(test["stdin"])
    try:
        with contextlib.redirect_stdout(out):
            exec(compile(code, "<candidate>", "exec"), {"__name__": "__main__"})
    finally:
        sys.stdin = old_stdin
    got = out.getvalue().strip()
    want = test["expected_stdout"].strip()
    if got == want:
        return True, None
    return False, "expected %r, got %r" % (want, got)


def main():
    req = json.loads(sys.stdin.read())
    code = req["code"]
    if "# shim: hang" in code:
        while True:
            time.sleep(1)
    if "# shim: garbage" in code:
        print("not json")
        return
    if "# shim: bad-version" in code:
        print(json.dumps({"shim_version": 99, "results": []}))
        return
    resp = {"shim_version": 1, "results": [], "fatal": None}
    ns = {"__name__": "candidate"}
    uses_stdin = all(t["kind"] == "io-pair" for t in req["tests"])
    if not uses_stdin:
        try:
            with contextlib.redirect_stdout(io.StringIO()):
                exec(compile(code, "<candidate>", "exec"), ns)
        except BaseException as e:
            resp["fatal"] = {"phase": "load", "message": "%s: %s" % (type(e).__name__, e)}
            print(json.dumps(resp))
            return
    signal.signal(signal.SIGALRM, _alarm)
    for i, test in enumerate(req["tests"]):
        signal.setitimer(signal.ITIMER_REAL, test.get("timeout_ms", 10000) / 1000.0)
        try:
            with contextlib.redirect_stdout(io.StringIO()) if not uses_stdin else contextlib.nullcontext():
                passed, detail = _run_test(code, ns, test)
        except _Timeout:
            passed, detail = False, "timeout"
        except AssertionError as e:
            passed, detail = False, "AssertionError: %s" % (str(e) or test.get("payload", ""))
        except BaseException as e:
            passed, detail = False, "%s: %s" % (type(e).__name__, e)
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0)
        resp["results"].append({"index": i, "passed": passed, "detail": detail})
    print(json.dumps(resp))


if __name__ == "__main__":
    main()
