"""Mini stack VM for contract programs.

Programs are straight-line code with forward-only jumps, so every run
terminates. Three program kinds share one instruction set:

``logic``
    Pure functions. No storage access, no calls. These are what get cloned.
``monolithic``
    Storage and logic mixed in one contract, the shape of a pre-split contract.
``state``
    Storage plus wrapper functions that call into the paired logic program
    through ``lcall``.

Return order is top-of-stack first: ``push 2; push 1; ret 2`` returns ``(1, 2)``.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, MutableMapping

from .encoding import DecodeError, decode, encode, sha256

UINT_MAX = 2**256 - 1

LOGIC = "logic"
MONOLITHIC = "monolithic"
STATE = "state"

SLOT_TYPES = ("uint", "address", "map")


class VMError(Exception):
    pass


class Revert(VMError):
    pass


class OutOfGas(Revert):
    pass


class ValidationFailed(VMError):
    pass


class AbiMismatch(VMError):
    pass


@dataclass(frozen=True)
class GasSchedule:
    instruction: int = 3
    deploy_slot: int = 20_000
    bytecode_byte: int = 200
    storage_write: int = 5_000
    event_byte: int = 8
    deploy_base: int = 32_000
    tx_base: int = 21_000
    calldata_byte: int = 16
    hash_op: int = 36
    log_base: int = 375

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value <= 0:
                raise ValueError(f"gas cost {name} must be positive")

    def deploy_cost(self, program: "Program") -> int:
        return (self.deploy_base
                + self.bytecode_byte * len(program.bytecode)
                + self.deploy_slot * len(program.slots))

    def event_cost(self, payload: bytes) -> int:
        return self.log_base + self.event_byte * len(payload)


DEFAULT_GAS = GasSchedule()


# opcode -> (mnemonic, operand kind)
OPCODES = {
    0x01: ("push", "uint"),
    0x02: ("arg", "u8"),
    0x03: ("add", None),
    0x04: ("sub", None),
    0x05: ("mul", None),
    0x06: ("div", None),
    0x07: ("lt", None),
    0x08: ("eq", None),
    0x09: ("select", None),
    0x0A: ("require", None),
    0x0B: ("ret", "u8"),
    0x0C: ("dup", "u8"),
    0x0D: ("pop", None),
    0x0E: ("swap", None),
    0x10: ("jump", "u16"),
    0x11: ("jumpi", "u16"),
    0x20: ("sload", "u8"),
    0x21: ("sstore", "u8"),
    0x22: ("mload", "u8"),
    0x23: ("mstore", "u8"),
    0x30: ("lcall", "call"),
}
MNEMONICS = {name: (op, kind) for op, (name, kind) in OPCODES.items()}
STORAGE_OPS = {"sload", "sstore", "mload", "mstore"}
WRITE_OPS = {"sstore", "mstore"}


@dataclass(frozen=True)
class Instr:
    op: str
    arg: object = None

    def __str__(self):
        if self.arg is None:
            return self.op
        if isinstance(self.arg, tuple):
            return f"{self.op} " + " ".join(str(a) for a in self.arg)
        return f"{self.op} {self.arg}"


@dataclass(frozen=True)
class Slot:
    name: str
    type: str = "uint"


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[tuple[str, str], ...]
    returns: tuple[tuple[str, str], ...]
    code: tuple[Instr, ...]


@dataclass(frozen=True)
class Program:
    name: str
    kind: str
    slots: tuple[Slot, ...] = ()
    functions: tuple[Function, ...] = ()
    _bytecode: bytes = field(default=b"", compare=False, repr=False)

    @property
    def bytecode(self) -> bytes:
        if not self._bytecode:
            object.__setattr__(self, "_bytecode", to_bytecode(self))
        return self._bytecode

    @property
    def code_hash(self) -> bytes:
        return sha256(self.bytecode)

    @property
    def abi(self) -> list:
        return [[f.name, [list(p) for p in f.params], [list(r) for r in f.returns]]
                for f in self.functions]

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise AbiMismatch(f"{self.name} has no function {name!r}")

    def slot_index(self, name: str) -> int:
        for i, s in enumerate(self.slots):
            if s.name == name:
                return i
        raise KeyError(name)


# ---------------------------------------------------------------- bytecode

def _encode_code(code) -> bytes:
    out = bytearray()
    for ins in code:
        op, kind = MNEMONICS[ins.op]
        out.append(op)
        if kind == "uint":
            raw = ins.arg.to_bytes(max(1, (ins.arg.bit_length() + 7) // 8), "little")
            out.append(len(raw))
            out += raw
        elif kind == "u8":
            out.append(ins.arg)
        elif kind == "u16":
            out += struct.pack("<H", ins.arg)
        elif kind == "call":
            fname, nargs, nrets = ins.arg
            raw = fname.encode()
            out.append(len(raw))
            out += raw
            out += bytes([nargs, nrets])
    return bytes(out)


def _decode_code(raw: bytes) -> tuple[Instr, ...]:
    code = []
    pos = 0
    try:
        while pos < len(raw):
            op = raw[pos]
            pos += 1
            if op not in OPCODES:
                raise ValidationFailed(f"unknown opcode 0x{op:02x}")
            name, kind = OPCODES[op]
            arg = None
            if kind == "uint":
                n = raw[pos]
                arg = int.from_bytes(raw[pos + 1:pos + 1 + n], "little")
                if pos + 1 + n > len(raw):
                    raise ValidationFailed("truncated push")
                pos += 1 + n
            elif kind == "u8":
                arg = raw[pos]
                pos += 1
            elif kind == "u16":
                (arg,) = struct.unpack("<H", raw[pos:pos + 2])
                pos += 2
            elif kind == "call":
                n = raw[pos]
                fname = raw[pos + 1:pos + 1 + n].decode()
                nargs, nrets = raw[pos + 1 + n], raw[pos + 2 + n]
                arg = (fname, nargs, nrets)
                pos += 3 + n
            code.append(Instr(name, arg))
    except (IndexError, struct.error, UnicodeDecodeError):
        raise ValidationFailed("truncated bytecode") from None
    return tuple(code)


def to_bytecode(program: Program) -> bytes:
    return encode([
        "xvm1",
        program.kind,
        [[s.name, s.type] for s in program.slots],
        [[f.name, len(f.params), len(f.returns), _encode_code(f.code)]
         for f in program.functions],
    ])


def from_bytecode(bytecode: bytes, abi: list, name: str = "") -> Program:
    """Rebuild a program from deployed bytes plus its ABI (as relayers do)."""
    try:
        magic, kind, slots, funcs = decode(bytecode)
    except (DecodeError, ValueError, TypeError):
        raise ValidationFailed("undecodable bytecode") from None
    if magic != "xvm1":
        raise ValidationFailed("bad magic")
    abi_map = {entry[0]: entry for entry in abi}
    functions = []
    for fname, nparams, nrets, raw in funcs:
        if fname not in abi_map:
            raise AbiMismatch(f"abi lacks {fname}")
        _, params, rets = abi_map[fname]
        if len(params) != nparams or len(rets) != nrets:
            raise AbiMismatch(f"abi arity mismatch for {fname}")
        functions.append(Function(fname, tuple(tuple(p) for p in params),
                                  tuple(tuple(r) for r in rets), _decode_code(raw)))
    program = Program(name, kind, tuple(Slot(n, t) for n, t in slots), tuple(functions))
    object.__setattr__(program, "_bytecode", bytes(bytecode))
    validate(program)
    return program


# ---------------------------------------------------------------- validation

def validate(program: Program) -> None:
    if program.kind not in (LOGIC, MONOLITHIC, STATE):
        raise ValidationFailed(f"unknown program kind {program.kind!r}")
    if program.kind == LOGIC and program.slots:
        raise ValidationFailed("logic programs declare no storage")
    for s in program.slots:
        if s.type not in SLOT_TYPES:
            raise ValidationFailed(f"bad slot type {s.type!r}")
    names = [f.name for f in program.functions]
    if len(set(names)) != len(names):
        raise ValidationFailed("duplicate function names")
    for f in program.functions:
        _validate_function(program, f)


def _validate_function(program: Program, f: Function) -> None:
    code = f.code
    if not code or code[-1].op != "ret":
        raise ValidationFailed(f"{f.name}: must end with ret")
    for pc, ins in enumerate(code):
        where = f"{f.name}@{pc}"
        if ins.op not in MNEMONICS:
            raise ValidationFailed(f"{where}: unknown op {ins.op}")
        if ins.op in ("jump", "jumpi"):
            if not pc < ins.arg < len(code):
                raise ValidationFailed(f"{where}: back-edge or out-of-range jump to {ins.arg}")
        elif ins.op == "arg":
            if ins.arg >= len(f.params):
                raise ValidationFailed(f"{where}: arg {ins.arg} out of range")
        elif ins.op == "ret":
            if ins.arg != len(f.returns):
                raise ValidationFailed(f"{where}: ret {ins.arg} != declared {len(f.returns)}")
        elif ins.op in STORAGE_OPS:
            if program.kind == LOGIC:
                raise ValidationFailed(f"{where}: storage access in logic program")
            if ins.arg >= len(program.slots):
                raise ValidationFailed(f"{where}: slot {ins.arg} out of range")
            is_map = program.slots[ins.arg].type == "map"
            if is_map != ins.op.startswith("m"):
                raise ValidationFailed(f"{where}: {ins.op} on {program.slots[ins.arg].type} slot")
        elif ins.op == "lcall":
            if program.kind != STATE:
                raise ValidationFailed(f"{where}: lcall only allowed in state programs")
        elif ins.op == "push":
            if not 0 <= ins.arg <= UINT_MAX:
                raise ValidationFailed(f"{where}: constant out of range")


# ---------------------------------------------------------------- execution

class GasMeter:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def charge(self, amount: int) -> None:
        self.used += amount
        if self.used > self.limit:
            raise OutOfGas(f"out of gas ({self.used} > {self.limit})")

    @property
    def remaining(self) -> int:
        return max(0, self.limit - self.used)


def slot_key(name: str, key: int | None = None) -> str:
    return name if key is None else f"{name}[{key}]"


LogicResolver = Callable[[], Program]


def execute(program: Program, fname: str, args, *, gas: GasMeter | int,
            schedule: GasSchedule = DEFAULT_GAS,
            storage: MutableMapping[str, int] | None = None,
            logic: Program | None = None) -> tuple:
    """Run ``fname`` and return its outputs.

    ``storage`` maps slot keys (``"remain"``, ``"wallet[7]"``) to ints; reads of
    absent keys give 0. ``logic`` is the program ``lcall`` dispatches into.
    """
    meter = gas if isinstance(gas, GasMeter) else GasMeter(gas)
    f = program.function(fname)
    args = list(args)
    if len(args) != len(f.params):
        raise AbiMismatch(f"{fname} takes {len(f.params)} args, got {len(args)}")
    for a in args:
        if not isinstance(a, int) or not 0 <= a <= UINT_MAX:
            raise AbiMismatch(f"argument {a!r} is not a uint")
    stack: list[int] = []
    code = f.code
    pc = 0

    def pop() -> int:
        if not stack:
            raise Revert("stack underflow")
        return stack.pop()

    while pc < len(code):
        ins = code[pc]
        op = ins.op
        meter.charge(schedule.instruction)
        pc += 1
        if op == "push":
            stack.append(ins.arg)
        elif op == "arg":
            stack.append(args[ins.arg])
        elif op in ("add", "sub", "mul", "div", "lt", "eq"):
            b = pop()
            a = pop()
            if op == "add":
                r = a + b
            elif op == "sub":
                if b > a:
                    raise Revert("uint underflow")
                r = a - b
            elif op == "mul":
                r = a * b
            elif op == "div":
                if b == 0:
                    raise Revert("division by zero")
                r = a // b
            elif op == "lt":
                r = int(a < b)
            else:
                r = int(a == b)
            if r > UINT_MAX:
                raise Revert("uint overflow")
            stack.append(r)
        elif op == "select":
            cond = pop()
            b = pop()
            a = pop()
            stack.append(a if cond else b)
        elif op == "require":
            if not pop():
                raise Revert(f"require failed in {fname}@{pc - 1}")
        elif op == "ret":
            if len(stack) < ins.arg:
                raise Revert("stack underflow on ret")
            return tuple(reversed(stack[len(stack) - ins.arg:])) if ins.arg else ()
        elif op == "dup":
            if ins.arg >= len(stack):
                raise Revert("dup out of range")
            stack.append(stack[-1 - ins.arg])
        elif op == "pop":
            pop()
        elif op == "swap":
            b = pop()
            a = pop()
            stack += [b, a]
        elif op == "jump":
            pc = ins.arg
        elif op == "jumpi":
            if pop():
                pc = ins.arg
        elif op in STORAGE_OPS:
            if storage is None:
                raise Revert("no storage bound")
            name = program.slots[ins.arg].name
            key = slot_key(name, pop()) if op.startswith("m") else name
            if op in WRITE_OPS:
                meter.charge(schedule.storage_write)
                storage[key] = pop()
            else:
                stack.append(storage.get(key, 0))
        elif op == "lcall":
            if logic is None:
                raise Revert("no logic contract bound")
            callee, nargs, nrets = ins.arg
            if len(stack) < nargs:
                raise Revert("stack underflow on lcall")
            call_args = stack[len(stack) - nargs:] if nargs else []
            del stack[len(stack) - nargs:]
            outs = execute(logic, callee, call_args, gas=meter, schedule=schedule)
            if len(outs) != nrets:
                raise AbiMismatch(f"lcall {callee} returned {len(outs)} values, expected {nrets}")
            stack.extend(reversed(outs))
        else:  # pragma: no cover - validated away
            raise Revert(f"bad op {op}")
    raise Revert(f"{fname} fell off the end")


# ---------------------------------------------------------------- static access analysis

@dataclass(frozen=True)
class Access:
    """Storage slots a function reads and writes, with map keys by argument."""
    reads: tuple[tuple[str, int | None], ...]
    writes: tuple[tuple[str, int | None], ...]
    calls: tuple[str, ...]


def analyze_access(program: Program, fname: str) -> Access:
    """Static read/write sets. Map keys must come from an ``arg`` right before."""
    f = program.function(fname)
    reads, writes, calls = [], [], []
    for pc, ins in enumerate(f.code):
        if ins.op in ("sload", "sstore"):
            entry = (program.slots[ins.arg].name, None)
        elif ins.op in ("mload", "mstore"):
            prev = f.code[pc - 1] if pc else None
            if prev is None or prev.op != "arg":
                raise ValidationFailed(f"{fname}@{pc}: map key must be a direct argument")
            entry = (program.slots[ins.arg].name, prev.arg)
        elif ins.op == "lcall":
            calls.append(ins.arg[0])
            continue
        else:
            continue
        target = writes if ins.op in WRITE_OPS else reads
        if entry not in target:
            target.append(entry)
    return Access(tuple(reads), tuple(writes), tuple(calls))


# ---------------------------------------------------------------- assembler

_SIG = re.compile(r"^\.func\s+(\w+)\s*(.*?)\s*(?:->\s*(.*))?$")


def _parse_params(text: str) -> tuple[tuple[str, str], ...]:
    out = []
    for tok in text.split():
        name, _, typ = tok.partition(":")
        out.append((name, typ or "uint"))
    return tuple(out)


def assemble(source: str) -> Program:
    """Compile the one-instruction-per-line text format to a :class:`Program`.

    Directives: ``.program NAME [KIND]``, ``.slot NAME [TYPE]``,
    ``.func NAME p:type ... -> r:type ...``, ``.end``. Labels end with ``:``.
    Comments start with ``;`` or ``#``.
    """
    name, kind = "anon", LOGIC
    slots: list[Slot] = []
    functions: list[Function] = []
    cur = None
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = re.split(r"[;#]", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith(".program"):
                parts = line.split()
                name = parts[1]
                kind = parts[2] if len(parts) > 2 else LOGIC
            elif line.startswith(".slot"):
                parts = line.split()
                slots.append(Slot(parts[1], parts[2] if len(parts) > 2 else "uint"))
            elif line.startswith(".func"):
                m = _SIG.match(line)
                if not m:
                    raise ValidationFailed("bad .func line")
                cur = {"name": m.group(1), "params": _parse_params(m.group(2)),
                       "returns": _parse_params(m.group(3) or ""), "lines": [], "labels": {}}
            elif line == ".end":
                functions.append(_finish(cur, slots))
                cur = None
            elif line.endswith(":") and cur is not None:
                cur["labels"][line[:-1]] = len(cur["lines"])
            elif cur is not None:
                cur["lines"].append(line.split())
            else:
                raise ValidationFailed("instruction outside .func")
        except ValidationFailed as exc:
            raise ValidationFailed(f"line {lineno}: {exc}") from None
    if cur is not None:
        raise ValidationFailed("unterminated .func")
    program = Program(name, kind, tuple(slots), tuple(functions))
    validate(program)
    return program


def _finish(cur, slots) -> Function:
    param_names = [p[0] for p in cur["params"]]
    slot_names = [s.name for s in slots]
    code = []
    for toks in cur["lines"]:
        op, rest = toks[0].lower(), toks[1:]
        if op not in MNEMONICS:
            raise ValidationFailed(f"unknown instruction {op!r}")
        kind = MNEMONICS[op][1]
        if kind is None:
            arg = None
        elif op == "arg":
            arg = param_names.index(rest[0]) if rest[0] in param_names else int(rest[0])
        elif op in STORAGE_OPS:
            arg = slot_names.index(rest[0]) if rest[0] in slot_names else int(rest[0])
        elif op in ("jump", "jumpi"):
            arg = cur["labels"][rest[0]] if rest[0] in cur["labels"] else int(rest[0])
        elif kind == "call":
            arg = (rest[0], int(rest[1]), int(rest[2]))
        else:
            arg = int(rest[0], 0)
        code.append(Instr(op, arg))
    return Function(cur["name"], cur["params"], cur["returns"], tuple(code))


def disassemble(program: Program) -> str:
    lines = [f".program {program.name} {program.kind}"]
    lines += [f".slot {s.name} {s.type}" for s in program.slots]
    for f in program.functions:
        sig = " ".join(f"{n}:{t}" for n, t in f.params)
        ret = " ".join(f"{n}:{t}" for n, t in f.returns)
        lines.append(f".func {f.name} {sig} -> {ret}".rstrip())
        lines += [f"    {ins}" for ins in f.code]
        lines.append(".end")
    return "\n".join(lines) + "\n"


def replace_instruction(program: Program, fname: str, pc: int, ins: Instr) -> Program:
    funcs = []
    for f in program.functions:
        if f.name == fname:
            code = list(f.code)
            code[pc] = ins
            f = Function(f.name, f.params, f.returns, tuple(code))
        funcs.append(f)
    return Program(program.name, program.kind, program.slots, tuple(funcs))
