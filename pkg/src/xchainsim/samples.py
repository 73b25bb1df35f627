"""Bundled sample programs and dApp descriptors."""

from __future__ import annotations

import random
from functools import lru_cache
from importlib import resources

from .encoding import account_key
from .vm import Program, assemble, slot_key

PROGRAMS = ("train", "hotel", "agency")

TRAIN_STORAGE = {"price": 10, "seats": 10_000}
HOTEL_STORAGE = {"price": 20, "remain": 10_000, "rating": 4, "checkin_day": 1, "checkout_day": 2,
                 "deposit": 50, "room_type": 1, "cancel_fee": 5}
AGENCY_STORAGE = {"bookings": 0}
USER_WALLET = 10**9


@lru_cache(maxsize=None)
def load_program(name: str) -> Program:
    """Assemble one of the bundled monolithic programs (``train``, ``hotel``, ``agency``)."""
    if name not in PROGRAMS:
        raise KeyError(f"no bundled program {name!r}")
    text = resources.files(__package__).joinpath("programs", f"{name}.asm").read_text()
    return assemble(text)


def genesis_storage(program: str, users=()) -> dict[str, int]:
    base = {"train": TRAIN_STORAGE, "hotel": HOTEL_STORAGE, "agency": AGENCY_STORAGE}[program]
    storage = dict(base)
    if program == "agency":
        for u in users:
            storage[slot_key("wallet", account_key(u))] = USER_WALLET
    return storage


def train_hotel(exec_chain: int = 1, train: str = "train", hotel: str = "hotel",
                agency: str = "agency") -> dict:
    """Outbound train, hotel, return train, then the agency charges the user.

    The bookings form a chain of calls, so the tree has depth 3.
    """
    return {
        "name": "train-hotel", "exec_chain": exec_chain, "inputs": ["user", "n"], "root": "agency",
        "nodes": {
            "agency": {"service": agency, "function": "settle", "order": "post",
                       "args": {"user": "input:user", "a": "out:outbound.0",
                                "b": "out:hotel.0", "c": "out:return.0"},
                       "calls": ["outbound"]},
            "outbound": {"service": train, "function": "book", "calls": ["hotel"],
                         "args": {"num": "input:n", "klass": "const:0"},
                         "amounts": {"seats": "arg:num"}},
            "hotel": {"service": hotel, "function": "book", "calls": ["return"],
                      "args": {"num": "input:n"}, "amounts": {"remain": "arg:num"}},
            "return": {"service": train, "function": "book",
                       "args": {"num": "input:n", "klass": "const:0"},
                       "amounts": {"seats": "arg:num"}},
        },
    }


def linear(depth: int, exec_chain: int = 1, remote=("train", "hotel"),
           agency: str = "agency") -> dict:
    """Root on the execution chain followed by ``depth`` remote bookings in a chain.

    Remote services alternate over ``remote``.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    nodes = {"root": {"service": agency, "function": "open", "args": {"user": "input:user"},
                      "calls": ["n1"]}}
    for i in range(1, depth + 1):
        sid = remote[(i - 1) % len(remote)]
        node = {"service": sid, "function": "book", "args": {"num": "input:n"},
                "amounts": {}, "calls": [f"n{i + 1}"] if i < depth else []}
        if sid.startswith("train"):
            node["args"]["klass"] = "const:0"
            node["amounts"] = {"seats": "arg:num"}
        else:
            node["amounts"] = {"remain": "arg:num"}
        nodes[f"n{i}"] = node
    return {"name": f"linear-{depth}", "exec_chain": exec_chain, "inputs": ["user", "n"],
            "root": "root", "nodes": nodes}


def random_dapp(rng: random.Random, services: dict, exec_chain: int = 1, max_nodes: int = 8,
                name: str = "random", agency: str = "agency") -> dict:
    """Random call tree of up to ``max_nodes`` contracts over the given services.

    The root is the agency's ``settle`` and charges the user for up to three
    of the bookings. Bookings use the input ``n`` or a small constant.
    """
    bookable = sorted(s for s, info in services.items()
                      if info.monolithic.name in ("Train", "Hotel"))
    count = rng.randint(1, max_nodes - 1)
    nodes: dict[str, dict] = {}
    ids = [f"b{i}" for i in range(count)]
    parents = ["root"] + ids
    children: dict[str, list] = {p: [] for p in parents}
    for i, nid in enumerate(ids):
        parent = rng.choice(parents[: i + 1])
        children[parent].append(nid)
    for nid in ids:
        sid = rng.choice(bookable)
        num = "input:n" if rng.random() < 0.6 else f"const:{rng.randint(1, 3)}"
        node = {"service": sid, "function": "book", "args": {"num": num},
                "order": rng.choice(["pre", "post"]), "calls": children[nid]}
        is_train = services[sid].monolithic.name == "Train"
        slot = "seats" if is_train else "remain"
        if is_train:
            node["args"]["klass"] = f"const:{rng.randint(0, 1)}"
        if rng.random() < 0.8:
            node["amounts"] = {slot: "arg:num"}
        nodes[nid] = node
    # the root charges for bookings that precede it; with post order that is all of them
    charged = ids[:3]
    args = {"user": "input:user"}
    for p, nid in zip("abc", charged + [None] * 3):
        args[p] = f"out:{nid}.0" if nid else "const:0"
    nodes["root"] = {"service": agency, "function": "settle", "order": "post",
                     "args": args, "calls": children["root"]}
    return {"name": name, "exec_chain": exec_chain, "inputs": ["user", "n"], "root": "root",
            "nodes": nodes}
