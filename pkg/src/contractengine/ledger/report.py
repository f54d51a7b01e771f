"""Human-readable transaction dumps listing version, inputs, outputs and lock-time."""
from __future__ import annotations

from typing import Optional

from .script import P2SH, ScriptError, parse, render
from .tx import Transaction


def _script_sig_lines(items) -> list[str]:
    lines = [f"ScriptSig: {render(items) if items else '<empty>'}"]
    if items and isinstance(items[-1], bytes):
        try:
            inner = parse(items[-1])
        except (ScriptError, ValueError):
            return lines
        if inner and inner[-1] == 0xAE:
            lines.append(f"  Redeem Script: {render(inner)}")
    return lines


def format_transaction(tx: Transaction, title: Optional[str] = None, redeem_scripts: Optional[dict] = None) -> str:
    """Dump ``tx``; ``redeem_scripts`` maps P2SH hashes to known redeem scripts."""
    redeem_scripts = redeem_scripts or {}
    lines = []
    if title:
        lines.append(title)
    lines += [f"Transaction-ID: {tx.txid.hex()}", f"Version number: {tx.version}",
              f"Number of inputs: {len(tx.inputs)}"]
    for txin in tx.inputs:
        if txin.is_coinbase:
            lines.append("Previous Transaction Output: <funding>")
        else:
            lines.append(f"Previous Transaction Output: {txin.prev_txid.hex()}")
            lines.append(f"Previous Transaction Output Index: IDX-{txin.prev_index:02d}")
        lines += _script_sig_lines(txin.script_sig)
    lines.append(f"Number of outputs: {len(tx.outputs)}")
    for i, out in enumerate(tx.outputs):
        lines.append(f"Output {i} value: {out.value}")
        lines.append(f"Output {i} script: {render(out.script_pubkey.script())}")
        if isinstance(out.script_pubkey, P2SH) and out.script_pubkey.script_hash in redeem_scripts:
            lines.append(f"  Redeem Script: {render(redeem_scripts[out.script_pubkey.script_hash].items())}")
    lines.append(f"LockTime: {tx.lock_time}")
    return "\n".join(lines)
