"""Split a monolithic program into a pure logic program and a state shell.

A storage-touching function is decouplable when it has the shape::

    <computation that may read slots>  <trailing stores>  ret n

Each slot read becomes a leading parameter of the logic function and each
trailing store becomes a leading return value. The state shell keeps every
slot, keeps read-only functions verbatim, and gets a wrapper per split
function that loads the slots, calls the logic through ``lcall`` and stores
the results.
"""

from __future__ import annotations

from .vm import (LOGIC, MONOLITHIC, STATE, STORAGE_OPS, Function, Instr, Program, Slot,
                 ValidationFailed, validate)


class NotDecouplable(ValueError):
    pass


def _trailing_stores(code) -> tuple[int, list[tuple[str, int, int | None]]]:
    """Start index of the trailing store block and its stores in code order."""
    i = len(code) - 2
    stores = []
    while i >= 0:
        ins = code[i]
        if ins.op == "sstore":
            stores.append(("s", ins.arg, None))
            i -= 1
        elif ins.op == "mstore" and i > 0 and code[i - 1].op == "arg":
            stores.append(("m", ins.arg, code[i - 1].arg))
            i -= 2
        else:
            break
    stores.reverse()
    return i + 1, stores


def _split_function(program: Program, f: Function):
    code = f.code
    block_start, stores = _trailing_stores(code)
    for pc, ins in enumerate(code[:block_start]):
        if ins.op in ("sstore", "mstore"):
            raise NotDecouplable(f"{f.name}: storage write at {pc} is mixed into the logic")
        if ins.op in ("jump", "jumpi") and ins.arg >= block_start:
            raise NotDecouplable(f"{f.name}: jump into the store block")
        if ins.op == "lcall":
            raise NotDecouplable(f"{f.name}: already calls a logic program")

    # slot keys read, in order of first appearance: (kind, slot index, map key arg)
    loads: list[tuple[str, int, int | None]] = []
    for pc, ins in enumerate(code[:block_start]):
        if ins.op == "sload":
            key = ("s", ins.arg, None)
        elif ins.op == "mload":
            prev = code[pc - 1] if pc else None
            if prev is None or prev.op != "arg":
                raise NotDecouplable(f"{f.name}: map key at {pc} is not a direct argument")
            key = ("m", ins.arg, prev.arg)
        else:
            continue
        if key not in loads:
            loads.append(key)

    n_loaded = len(loads)
    new_code: list[Instr] = []
    remap: dict[int, int] = {}
    skip = set()
    for pc, ins in enumerate(code[:block_start]):
        if ins.op == "mload":
            skip.add(pc - 1)
    for pc, ins in enumerate(code[:block_start]):
        remap[pc] = len(new_code)
        if pc in skip:
            continue
        if ins.op == "sload":
            new_code.append(Instr("arg", loads.index(("s", ins.arg, None))))
        elif ins.op == "mload":
            new_code.append(Instr("arg", loads.index(("m", ins.arg, code[pc - 1].arg))))
        elif ins.op == "arg":
            new_code.append(Instr("arg", n_loaded + ins.arg))
        else:
            new_code.append(ins)
    remap[block_start] = len(new_code)
    n_ret = code[-1].arg
    new_code.append(Instr("ret", n_ret + len(stores)))
    new_code = [Instr(i.op, remap[i.arg]) if i.op in ("jump", "jumpi") else i for i in new_code]

    def key_name(kind, slot, arg):
        name = program.slots[slot].name
        return name if kind == "s" else f"{name}_{f.params[arg][0]}"

    def key_type(kind, slot):
        return "uint" if kind == "m" else program.slots[slot].type

    logic_params = tuple((key_name(*k), key_type(k[0], k[1])) for k in loads) + f.params
    logic_returns = tuple((key_name(*s) + "_new", key_type(s[0], s[1])) for s in stores) + f.returns
    logic_fn = Function(f.name, logic_params, logic_returns, tuple(new_code))

    wrapper: list[Instr] = []
    for kind, slot, arg in loads:
        if kind == "s":
            wrapper.append(Instr("sload", slot))
        else:
            wrapper += [Instr("arg", arg), Instr("mload", slot)]
    wrapper += [Instr("arg", i) for i in range(len(f.params))]
    wrapper.append(Instr("lcall", (f.name, len(logic_params), len(logic_returns))))
    for kind, slot, arg in stores:
        if kind == "s":
            wrapper.append(Instr("sstore", slot))
        else:
            wrapper += [Instr("arg", arg), Instr("mstore", slot)]
    wrapper.append(Instr("ret", n_ret))
    wrapper_fn = Function(f.name, f.params, f.returns, tuple(wrapper))
    return logic_fn, wrapper_fn


def lsd_transform(program: Program) -> tuple[Program, Program]:
    """Return ``(logic, state)`` programs equivalent to ``program``."""
    if program.kind != MONOLITHIC:
        raise NotDecouplable(f"{program.name} is not a monolithic program")
    logic_fns, state_fns = [], []
    for f in program.functions:
        ops = {ins.op for ins in f.code}
        touches = ops & STORAGE_OPS
        if not touches:
            logic_fns.append(f)
            n = len(f.params)
            state_fns.append(Function(f.name, f.params, f.returns, tuple(
                [Instr("arg", i) for i in range(n)]
                + [Instr("lcall", (f.name, n, len(f.returns))), Instr("ret", len(f.returns))])))
        elif not touches & {"sstore", "mstore"}:
            state_fns.append(f)
        else:
            lf, wf = _split_function(program, f)
            logic_fns.append(lf)
            state_fns.append(wf)
    logic = Program("L" + program.name, LOGIC, (), tuple(logic_fns))
    extra = (Slot("lock_size", "uint"), Slot("lockpool", "map"),
             Slot("addr_l" + program.name.lower(), "address"))
    state = Program("S" + program.name, STATE, program.slots + extra, tuple(state_fns))
    try:
        validate(logic)
        validate(state)
    except ValidationFailed as exc:
        raise NotDecouplable(str(exc)) from None
    return logic, state
