import random

import pytest

from chainabac.codec import ZERO_HASH, merkle_root, sha256
from chainabac.errors import ChainDiscontinuity, HeightOutOfRange
from chainabac.ledger import Block, DecisionRecord, Ledger
from chainabac.ledger.store import INDEX_ENTRY
from chainabac.state import ValidationCode

from chainutil import build_chain, independent_header_hashes, random_tx


@pytest.fixture
def file_ledger(tmp_path):
    ledger = Ledger.open(tmp_path / "chain", blocks_per_file=4, fsync=False)
    yield ledger
    ledger.close()


def test_genesis():
    ledger = Ledger()
    assert ledger.append_block(Block.genesis()) == 0
    g = ledger.get_block(0)
    assert g.header.previous_hash == ZERO_HASH and g.header.height == 0
    assert ledger.verify_chain().intact


def test_gap_rejected():
    ledger = Ledger()
    ledger.append_block(Block.genesis())
    with pytest.raises(ChainDiscontinuity):
        ledger.append_block(Block.build(2, ledger.tip_hash(), [], []))
    with pytest.raises(ChainDiscontinuity):
        ledger.append_block(Block.build(1, ZERO_HASH, [], []))


def test_five_blocks_match_independent_hashes(file_ledger):
    build_chain(file_ledger, 5, random.Random(1))
    assert file_ledger.tip == 4
    assert file_ledger.verify_chain().intact
    hashes = independent_header_hashes(file_ledger.store.dir)
    assert len(hashes) == 5
    assert hashes[-1] == file_ledger.tip_hash()


def test_ten_block_chain_intact(file_ledger):
    build_chain(file_ledger, 10, random.Random(2))
    assert file_ledger.verify_chain().intact
    assert len(independent_header_hashes(file_ledger.store.dir)) == 10


def _byte_offset_of_block(ledger, height):
    _, fno, off, length = ledger.store._entries[height]
    return ledger.store._file(fno), off, length


def test_payload_flip_detected_at_block(file_ledger):
    build_chain(file_ledger, 10, random.Random(3), max_txs=3, min_txs=1)
    path, off, length = _byte_offset_of_block(file_ledger, 4)
    data = bytearray(path.read_bytes())
    data[off + 4 + length // 2] ^= 0x01
    path.write_bytes(bytes(data))
    status = file_ledger.verify_chain()
    assert not status.intact and status.first_bad_height == 4


def test_index_flip_detected(file_ledger):
    build_chain(file_ledger, 6, random.Random(4))
    idx = file_ledger.store.dir / "index.dat"
    data = bytearray(idx.read_bytes())
    data[3 * INDEX_ENTRY.size + 20] ^= 0x80
    idx.write_bytes(bytes(data))
    status = file_ledger.verify_chain()
    assert status.first_bad_height == 3


def test_file_header_flip_detected(file_ledger):
    build_chain(file_ledger, 9, random.Random(5))
    path = file_ledger.store._file(1)   # holds heights 4..7
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    assert file_ledger.verify_chain().first_bad_height == 4


def test_memory_tamper_detected():
    ledger = Ledger()
    build_chain(ledger, 6, random.Random(6))
    raw = bytearray(ledger.store.records[5])
    raw[10] ^= 1
    ledger.store.records[5] = bytes(raw)
    assert ledger.verify_chain().first_bad_height == 5


def test_genesis_only_intact():
    ledger = Ledger()
    ledger.append_block(Block.genesis())
    assert ledger.verify_chain().intact


def test_reopen_preserves_chain(tmp_path):
    ledger = Ledger.open(tmp_path / "c", blocks_per_file=3, fsync=False)
    build_chain(ledger, 7, random.Random(7))
    tip_hash = ledger.tip_hash()
    again = Ledger.open(tmp_path / "c", blocks_per_file=3, fsync=False)
    assert again.tip == 6 and again.tip_hash() == tip_hash
    assert again.get_block(5).to_bytes() == ledger.get_block(5).to_bytes()
    assert again.verify_chain().intact


def test_get_block_out_of_range():
    ledger = Ledger()
    ledger.append_block(Block.genesis())
    with pytest.raises(HeightOutOfRange):
        ledger.get_block(1)
    with pytest.raises(HeightOutOfRange):
        ledger.get_block(-1)


def test_hash_determinism():
    rng = random.Random(8)
    txs = [random_tx(rng, i) for i in range(5)]
    b1 = Block.build(1, ZERO_HASH, txs, [ValidationCode.VALID] * 5)
    b2 = Block.from_bytes(b1.to_bytes())
    assert b1.to_bytes() == b2.to_bytes()
    assert b1.header.hash() == b2.header.hash()
    assert b1.header.data_hash == merkle_root([t.tx_id for t in txs])


def test_merkle_odd_duplicates_last():
    a, b, c = sha256(b"a"), sha256(b"b"), sha256(b"c")
    assert merkle_root([a, b, c]) == sha256(sha256(a + b) + sha256(c + c))
    assert merkle_root([a]) == a


def test_history_by_prefix():
    from chainabac.ledger import Transaction, TxType
    from chainabac.state import ReadWriteSet, StateKey
    from chainutil import T0

    def tx(key, n, valid=True):
        return Transaction(TxType.POLICY_UPDATE, b'{"n":%d}' % n,
                           ReadWriteSet(writes=((StateKey.parse(key), b"v"),)), T0, "c")

    ledger = Ledger()
    ledger.append_block(Block.genesis())
    V, X = ValidationCode.VALID, ValidationCode.MVCC_READ_CONFLICT
    blocks = [
        [(tx("policy:policy01", 1), V), (tx("policy:policy010", 2), V)],
        [(tx("decision:r001/a", 3), V), (tx("policy:policy01", 4), X)],
        [(tx("policy:policy01", 5), V), (tx("decision:r001/b", 6), V)],
        [(tx("policy:policy01", 7), V), (tx("decision:r0011/c", 8), V)],
    ]
    for h, entries in enumerate(blocks, start=1):
        ledger.append_block(Block.build(h, ledger.tip_hash(), [t for t, _ in entries],
                                        [v for _, v in entries]))
    hist = ledger.query_history_for_key("policy:policy01")
    assert [(h, i) for h, i, _ in hist] == [(1, 0), (3, 0), (4, 0)]
    assert [(h, i) for h, i, _ in ledger.query_history_for_key("decision:r001")] == [(2, 0), (3, 1)]
    assert ledger.query_history_for_key("subject:nobody") == []
    # index keeps up with appends after first use
    ledger.append_block(Block.build(5, ledger.tip_hash(), [tx("policy:policy01", 9)], [V]))
    assert len(ledger.query_history_for_key("policy:policy01")) == 4


def test_decision_record_roundtrip():
    rec = DecisionRecord("q1", "s001", "r001", "policy01", "Deny", ("user.status",),
                         sha256(b"x"), "2020-05-10T00:00:00Z", None, "c1")
    assert DecisionRecord.from_bytes(rec.to_bytes()) == rec
