from tpaudit.canon import encode_record
from tpaudit.ledger import Ledger


def five_block_chain(batch_size=4):
    led = Ledger(batch_size)
    for i in range(5 * batch_size):
        led.append(encode_record({"kind": "attempt", "client_id": f"c{i % 3}", "at": 1000 + i,
                                  "status": "granted" if i % 2 else "mismatch"}), 1000 + i)
    assert len(led.blocks) == 5 and not led.pending
    return led


def block_of_offset(data: bytes, offset: int) -> int:
    return data[:offset].count(b"\n")
