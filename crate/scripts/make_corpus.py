#!/usr/bin/env python3
"""Generate the bundled training corpus.

Molecules are assembled as graphs from ring templates, linkers and
substituents with valence bookkeeping, then written as depth-first
SMILES from a peripheral atom, smaller branches first
(``--randomized`` picks a random root and neighbour order instead). Output only uses
symbols from crates/core/data/vocab.txt.

    python3 scripts/make_corpus.py --seed 20241016 -n 5000 > crates/core/data/corpus.smi
"""

import argparse
import random
import re
import sys

MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1}
TOKEN_RE = re.compile(r"(\[[^\]]+\]|%\d\d|Cl|Br|.)")


class Mol:
    def __init__(self):
        self.atoms = []  # dicts: el, arom, h (explicit H for [nH]), charge, maxv
        self.bonds = {}  # (i, j) with i < j -> order (1, 2, 3) or "a"

    def add_atom(self, el, arom=False, h=0, charge=0, maxv=None):
        self.atoms.append(
            dict(el=el, arom=arom, h=h, charge=charge,
                 maxv=maxv if maxv is not None else MAX_VALENCE[el])
        )
        return len(self.atoms) - 1

    def add_bond(self, i, j, order):
        key = (min(i, j), max(i, j))
        assert key not in self.bonds and i != j
        self.bonds[key] = order

    def neighbours(self, i):
        out = []
        for (a, b), o in self.bonds.items():
            if a == i:
                out.append((b, o))
            elif b == i:
                out.append((a, o))
        return out

    def used(self, i):
        total = 0
        for _, o in self.neighbours(i):
            total += 1 if o == "a" else o
        atom = self.atoms[i]
        if atom["arom"] and atom["el"] == "C":
            total += 1  # pi bond of the aromatic system
        if atom["arom"] and atom["el"] == "N" and atom["h"] == 0 and len(self.neighbours(i)) == 2:
            total += 1  # pyridine-type nitrogen
        return total + atom["h"]

    def free(self, i):
        atom = self.atoms[i]
        if atom["arom"] and atom["el"] == "N" and atom["h"] == 1:
            return 1  # [nH] can trade its hydrogen for a substituent
        if atom["charge"] != 0:
            return 0
        return atom["maxv"] - self.used(i)

    def attach_point(self, i):
        atom = self.atoms[i]
        if atom["arom"] and atom["el"] == "N" and atom["h"] == 1:
            atom["h"] = 0


# Aromatic templates: (elements, explicit H list, ring edges). Lower-case
# element means aromatic.
def ring5(els, hs):
    return els, hs, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]


def ring6(els):
    return els, [0] * 6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]


AROMATIC = [
    (ring6(list("cccccc")), 10),
    (ring6(list("ncccccc")[:6]), 3),
    (ring6(list("cncncc")), 2),
    (ring5(list("ncccc"), [1, 0, 0, 0, 0]), 2),
    (ring5(list("occcc"), [0] * 5), 2),
    (ring5(list("scccc"), [0] * 5), 2),
    (ring5(list("ncncc"), [1, 0, 0, 0, 0]), 1),
    (ring5(list("nnccc"), [1, 0, 0, 0, 0]), 1),
    (ring5(list("scncc"), [0] * 5), 1),
    (ring5(list("ocncc"), [0] * 5), 1),
    # naphthalene
    ((list("cccccccccc"), [0] * 10,
      [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (4, 6), (6, 7), (7, 8), (8, 9), (9, 5)]), 1),
    # indole
    ((list("ccccccncc"), [0, 0, 0, 0, 0, 0, 1, 0, 0],
      [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (4, 6), (6, 7), (7, 8), (8, 5)]), 1),
    # quinoline
    ((list("ccccccnccc"), [0] * 10,
      [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (4, 6), (6, 7), (7, 8), (8, 9), (9, 5)]), 1),
]

ALIPHATIC = [
    ("CCC", [], 1),
    ("CCCC", [], 1),
    ("CCCCC", [], 3),
    ("CCCCCC", [], 4),
    ("CCNCC", [], 2),  # pyrrolidine
    ("CCNCCC", [], 3),  # piperidine
    ("CCOCCN", [], 2),  # morpholine
    ("CNCCNC", [], 2),  # piperazine
    ("CCOCC", [], 1),  # tetrahydrofuran
    ("CCCCCC", [(0, 1)], 1),  # cyclohexene
]


def add_aromatic(mol, rng):
    (els, hs, edges) = weighted(rng, AROMATIC)
    idx = []
    for el, h in zip(els, hs):
        name = {"c": "C", "n": "N", "o": "O", "s": "S"}[el]
        idx.append(mol.add_atom(name, arom=True, h=h))
    for a, b in edges:
        mol.add_bond(idx[a], idx[b], "a")
    return idx


def add_aliphatic(mol, rng):
    (els, doubles) = weighted(rng, [((e, d), w) for e, d, w in ALIPHATIC])
    idx = [mol.add_atom(e) for e in els]
    n = len(idx)
    for k in range(n):
        a, b = k, (k + 1) % n
        mol.add_bond(idx[a], idx[b], 2 if (a, b) in doubles else 1)
    return idx


def weighted(rng, items):
    total = sum(w for _, w in items)
    x = rng.uniform(0, total)
    for item, w in items:
        x -= w
        if x <= 0:
            return item
    return items[-1][0]


def free_atoms(mol, need=1, among=None):
    pool = among if among is not None else range(len(mol.atoms))
    return [i for i in pool if mol.free(i) >= need]


def add_chain(mol, rng, anchor, length, hetero):
    prev = anchor
    for _ in range(length):
        el = "C"
        if hetero and rng.random() < 0.25:
            el = rng.choice(["N", "O", "S"])
        # keep O/S from being chain-internal twice in a row
        a = mol.add_atom(el)
        mol.attach_point(prev)
        mol.add_bond(prev, a, 1)
        prev = a
    return prev


SUBSTITUENTS = [
    ("F", 6), ("Cl", 6), ("Br", 2), ("I", 1), ("C", 12), ("CC", 4), ("O", 6), ("N", 4),
    ("OC", 5), ("C(=O)O", 4), ("C#N", 3), ("C(F)(F)F", 3), ("nitro", 2), ("C(=O)N", 3),
    ("C=O", 2), ("S(=O)(=O)N", 1), ("C(=O)C", 2), ("NC(=O)C", 2),
]


def add_substituent(mol, rng, at):
    kind = weighted(rng, SUBSTITUENTS)
    mol.attach_point(at)
    if kind == "nitro":
        n = mol.add_atom("N", charge=1, maxv=4)
        o1 = mol.add_atom("O")
        o2 = mol.add_atom("O", charge=-1, maxv=1)
        mol.add_bond(at, n, 1)
        mol.add_bond(n, o1, 2)
        mol.add_bond(n, o2, 1)
        return
    if kind == "S(=O)(=O)N":
        s = mol.add_atom("S", maxv=6)
        mol.add_bond(at, s, 1)
        for _ in range(2):
            mol.add_bond(s, mol.add_atom("O"), 2)
        mol.add_bond(s, mol.add_atom("N"), 1)
        return
    # tiny linear grammar: atoms with optional (=X) / (X) branches
    prev = at
    first = True
    toks = TOKEN_RE.findall(kind)
    k = 0
    order = 1
    while k < len(toks):
        t = toks[k]
        if t == "(":
            # branch: (=O) or (F)
            j = toks.index(")", k)
            inner = toks[k + 1:j]
            bo = 1
            if inner[0] in "=#":
                bo = 2 if inner[0] == "=" else 3
                inner = inner[1:]
            b = mol.add_atom(inner[0])
            mol.add_bond(prev, b, bo)
            k = j + 1
            continue
        if t in ("=", "#"):
            order = 2 if t == "=" else 3
            k += 1
            continue
        a = mol.add_atom(t)
        mol.add_bond(prev, a, order)
        order = 1
        prev = a
        first = False
        k += 1
    del first


def random_hydrocarbon(rng, n_carbons):
    mol = Mol()
    mol.add_atom("C")
    while len(mol.atoms) < n_carbons:
        cands = free_atoms(mol)
        at = rng.choice(cands)
        # prefer growing linear chains
        ends = [i for i in cands if len(mol.neighbours(i)) <= 1]
        if ends and rng.random() < 0.7:
            at = rng.choice(ends)
        a = mol.add_atom("C")
        mol.add_bond(at, a, 1)
    if rng.random() < 0.15:
        pairs = [k for k in mol.bonds if mol.free(k[0]) >= 1 and mol.free(k[1]) >= 1]
        if pairs:
            mol.bonds[rng.choice(pairs)] = 2
    return mol


def random_acyclic(rng):
    mol = Mol()
    mol.add_atom("C")
    n = rng.randint(5, 12)
    add_chain(mol, rng, 0, n, hetero=True)
    for _ in range(rng.randint(0, 3)):
        cands = free_atoms(mol)
        if cands:
            add_substituent(mol, rng, rng.choice(cands))
    return mol


def random_ring_molecule(rng):
    mol = Mol()
    n_rings = weighted(rng, [(1, 5), (2, 4), (3, 1)])
    current = []
    for r in range(n_rings):
        new = add_aromatic(mol, rng) if rng.random() < 0.7 else add_aliphatic(mol, rng)
        if r == 0:
            current = list(new)
            continue
        left = free_atoms(mol, among=current)
        right = free_atoms(mol, among=new)
        if not left or not right:
            continue
        a = rng.choice(left)
        b = rng.choice(right)
        linker = weighted(rng, [(0, 3), (1, 3), (2, 2), (3, 1)])
        end = add_chain(mol, rng, a, linker, hetero=True) if linker else a
        mol.attach_point(end)
        mol.attach_point(b)
        if linker == 1 and rng.random() < 0.3 and mol.free(end) >= 2 and mol.atoms[end]["el"] == "C":
            # amide-like carbonyl linker
            mol.add_bond(end, mol.add_atom("O"), 2)
        mol.add_bond(end, b, 1)
        current.extend(new)
    for _ in range(weighted(rng, [(0, 2), (1, 4), (2, 3), (3, 2)])):
        cands = free_atoms(mol)
        if cands:
            add_substituent(mol, rng, rng.choice(cands))
    if rng.random() < 0.3:
        cands = free_atoms(mol)
        if cands:
            add_chain(mol, rng, rng.choice(cands), rng.randint(1, 4), hetero=True)
    return mol


def stereo_alkene(rng):
    left = "C" * rng.randint(1, 5)
    right = "C" * rng.randint(1, 5)
    a, b = rng.choice(["/", "\\"]), rng.choice(["/", "\\"])
    tail = rng.choice(["", "O", "N", "Cl", "C(=O)O", "c1ccccc1"])
    return f"{left}{a}C=C{b}{right}{tail}"


def atom_symbol(atom):
    el = atom["el"]
    if atom["arom"]:
        if el == "N" and atom["h"] == 1:
            return "[nH]"
        return el.lower()
    if atom["charge"] == 1:
        return "[N+]"
    if atom["charge"] == -1:
        return "[O-]"
    return el


def bond_symbol(mol, i, j, order):
    if order == "a":
        return ""
    if order == 1:
        return ""
    return "=" if order == 2 else "#"


def farthest(adj, start):
    dist = {start: 0}
    queue = [start]
    for u in queue:
        for v, _ in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return max(dist, key=lambda a: (dist[a], -a))


def write_smiles(mol, rng, randomized):
    n = len(mol.atoms)
    adj = {i: [] for i in range(n)}
    for (a, b), o in mol.bonds.items():
        adj[a].append((b, o))
        adj[b].append((a, o))
    if randomized:
        for i in adj:
            rng.shuffle(adj[i])
        root = rng.randrange(n)
    else:
        # construction order keeps rings contiguous; start at the far end of
        # the molecule
        for i in adj:
            adj[i].sort()
        root = farthest(adj, farthest(adj, 0))

    # pass 1: spanning tree, ring-closure edges
    parent = {root: None}
    order = []
    children = {i: [] for i in range(n)}
    closures = {}  # atom -> list of (other, bond order)
    stack = [root]
    seen_edges = set()
    visited = set()

    def dfs(u):
        visited.add(u)
        order.append(u)
        for v, o in adj[u]:
            key = (min(u, v), max(u, v))
            if key in seen_edges:
                continue
            seen_edges.add(key)
            if v in visited:
                closures.setdefault(u, []).append((v, o))
                closures.setdefault(v, []).append((u, o))
            else:
                parent[v] = u
                children[u].append((v, o))
                dfs(v)

    sys.setrecursionlimit(10000)
    dfs(root)
    del stack
    assert len(visited) == n

    if not randomized:
        # short branches first so the longest chain runs unbranched
        size = {}

        def subtree(u):
            size[u] = 1 + sum(subtree(v) for v, _ in children[u])
            return size[u]

        subtree(root)
        for u in children:
            children[u].sort(key=lambda c: size[c[0]])

    # pass 2: emit, assigning ring labels in visit order
    rank = {a: k for k, a in enumerate(order)}
    labels_free = list(range(1, 20))
    open_labels = {}  # edge key -> label
    out = []

    def emit(u):
        out.append(atom_symbol(mol.atoms[u]))
        for v, o in sorted(closures.get(u, []), key=lambda x: rank[x[0]]):
            key = (min(u, v), max(u, v))
            if key in open_labels:
                lab = open_labels.pop(key)
                out.append(bond_symbol(mol, u, v, o))
                out.append(str(lab) if lab < 10 else f"%{lab}")
                labels_free.append(lab)
                labels_free.sort()
            else:
                lab = labels_free.pop(0)
                open_labels[key] = lab
                out.append(bond_symbol(mol, u, v, o))
                out.append(str(lab) if lab < 10 else f"%{lab}")
        kids = children[u]
        for k, (v, o) in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                out.append("(")
            out.append(bond_symbol(mol, u, v, o))
            emit(v)
            if not last:
                out.append(")")

    emit(root)
    return "".join(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20241016)
    ap.add_argument("-n", type=int, default=5000)
    ap.add_argument("--randomized", action="store_true",
                    help="random root and neighbour order instead of construction order")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    seen = set()
    out = []
    while len(out) < args.n:
        x = rng.random()
        if x < 0.12:
            mol = random_hydrocarbon(rng, rng.randint(6, 16))
        elif x < 0.25:
            mol = random_acyclic(rng)
        elif x < 0.27:
            smi = stereo_alkene(rng)
            mol = None
        else:
            mol = random_ring_molecule(rng)
        if mol is not None:
            smi = write_smiles(mol, rng, args.randomized)
        ntok = len(TOKEN_RE.findall(smi))
        if ntok < 10 or ntok > 80 or smi in seen:
            continue
        seen.add(smi)
        out.append(smi)
    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
