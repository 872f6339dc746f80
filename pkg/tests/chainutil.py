"""Chain fixtures plus an independent raw-bytes verifier."""

import hashlib
import random
import struct
from datetime import datetime, timedelta, timezone
from pathlib import Path

from chainabac.codec import canonical_bytes
from chainabac.ledger import Block, Transaction, TxType
from chainabac.state import ReadWriteSet, StateKey, ValidationCode, Version

T0 = datetime(2020, 5, 10, tzinfo=timezone.utc)


def random_tx(rng: random.Random, n: int) -> Transaction:
    obj = f"r{rng.randint(0, 3)}"
    writes = [(StateKey("decision", f"{obj}/n{n}"), canonical_bytes({"n": n}))]
    if rng.random() < 0.5:
        writes.append((StateKey("subject", f"s{rng.randint(0, 3)}"), b'{"x":1}'))
    reads = [(StateKey("resource", obj), Version(rng.randint(0, 5), rng.randint(0, 3)))]
    return Transaction(TxType.POLICY_DECISION, canonical_bytes({"n": n, "object": obj}),
                       ReadWriteSet(tuple(reads), tuple(sorted(writes))),
                       T0 + timedelta(milliseconds=n), f"client{n % 3}",
                       (("org1", rng.randbytes(64)), ("org2", rng.randbytes(64))))


def build_chain(ledger, n_blocks: int, rng: random.Random, max_txs: int = 4, min_txs: int = 0) -> None:
    """Append genesis plus ``n_blocks - 1`` random blocks."""
    ledger.append_block(Block.genesis())
    counter = 0
    for h in range(1, n_blocks):
        txs = []
        for _ in range(rng.randint(min_txs, max_txs)):
            txs.append(random_tx(rng, counter))
            counter += 1
        validity = [rng.choice([ValidationCode.VALID, ValidationCode.VALID,
                                ValidationCode.MVCC_READ_CONFLICT]) for _ in txs]
        ledger.append_block(Block.build(h, ledger.tip_hash(), txs, validity))


def _merkle(leaves):
    if not leaves:
        return hashlib.sha256(b"").digest()
    while len(leaves) > 1:
        if len(leaves) % 2:
            leaves = leaves + [leaves[-1]]
        leaves = [hashlib.sha256(leaves[i] + leaves[i + 1]).digest()
                  for i in range(0, len(leaves), 2)]
    return leaves[0]


def raw_blocks(directory: Path):
    """Yield each block's raw bytes straight from the data files (index ignored)."""
    files = sorted(Path(directory).glob("blockfile_*.dat"))
    for f in files:
        data = f.read_bytes()
        pos = 14
        while pos < len(data):
            (n,) = struct.unpack_from(">I", data, pos)
            yield data[pos + 4:pos + 4 + n]
            pos += 4 + n


def independent_header_hashes(directory: Path) -> list[bytes]:
    """Recompute header hashes and check every linkage by hand; raises on mismatch."""
    prev = bytes(32)
    hashes = []
    for height, raw in enumerate(raw_blocks(directory)):
        h, prev_hash, data_hash, meta_hash = struct.unpack_from(">Q32s32s32s", raw, 0)
        assert h == height and prev_hash == prev
        pos = 8 + 96
        (ntx,) = struct.unpack_from(">I", raw, pos)
        pos += 4
        ids = []
        for _ in range(ntx):
            (n,) = struct.unpack_from(">I", raw, pos)
            tx = raw[pos + 4:pos + 4 + n]
            assert hashlib.sha256(tx[32:]).digest() == tx[:32]
            ids.append(tx[:32])
            pos += 4 + n
        assert _merkle(ids) == data_hash
        assert hashlib.sha256(raw[pos:]).digest() == meta_hash
        prev = hashlib.sha256(raw[:104]).digest()
        hashes.append(prev)
    return hashes
