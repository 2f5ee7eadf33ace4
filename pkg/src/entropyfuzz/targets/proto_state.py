"""Five-state command protocol: INIT, GREETED, AUTHED, TRANSFER, CLOSED."""

from __future__ import annotations

from .base import Tracer

INIT, GREETED, AUTHED, TRANSFER, CLOSED = range(5)
TOKEN = 0x42
BUF_SIZE = 32
MAX_FAILS = 3
MAX_COMMANDS = 8


def proto_state(data: bytes, t: Tracer) -> None:
    t(1)
    state = INIT
    fails = 0
    buffered = 0
    freed = False
    pos = 0
    n = len(data)
    commands = 0
    while pos < n and state != CLOSED and commands < MAX_COMMANDS:
        commands += 1
        cmd = data[pos]
        pos += 1
        if cmd == ord("Q"):
            t(2)
            state = CLOSED
        elif cmd == ord("R"):
            t(3)
            if state == TRANSFER:
                t(4)
                freed = True  # transfer buffer released
            state = INIT
        elif state == INIT:
            if cmd == ord("H"):
                t(5)
                state = GREETED
            else:
                t(6)
                return
        elif state == GREETED:
            if cmd == ord("U") and pos < n:
                t(7)
                pos += 1
            elif cmd == ord("P") and pos < n:
                t(8)
                token = data[pos]
                pos += 1
                if token == TOKEN:
                    t(9)
                    state = AUTHED
                else:
                    t(10)
                    fails += 1
                    if fails >= MAX_FAILS:
                        t(11)
                        state = CLOSED
            else:
                t(12)
                return
        elif state == AUTHED:
            if cmd == ord("B"):
                t(13)
                state = TRANSFER
            elif cmd == ord("S"):
                t(14)  # status query
            else:
                t(15)
                return
        elif state == TRANSFER:
            if cmd == ord("D") and pos < n:
                t(16)
                ln = data[pos]
                pos += 1
                # BUG: writing into a buffer released by an earlier reset
                if freed:
                    t.crash(17)
                chunk = data[pos:pos + ln]
                pos += len(chunk)
                buffered += len(chunk)
                # BUG: accumulated length is never checked against BUF_SIZE
                if buffered > BUF_SIZE - 16 and ln > 8:
                    t.crash(18)
                if 0 in chunk:
                    t(19)
                else:
                    t(20)
            elif cmd == ord("E"):
                t(21)
                buffered = 0
                state = AUTHED
            else:
                t(22)
                return
    if state == CLOSED:
        t(23)
    else:
        t(24)
