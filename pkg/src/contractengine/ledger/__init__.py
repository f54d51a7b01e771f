from .chain import (
    UNKNOWN,
    UNSPENT,
    Chain,
    DoubleSpend,
    Immature,
    InvalidTransaction,
    ScriptFailure,
    UtxoStatus,
    eval_script,
)
from .report import format_transaction
from .script import (
    MAX_MULTISIG_ITEMS,
    P2PKH,
    P2SH,
    InvalidM,
    Op,
    RedeemScript,
    ScriptError,
    TooManyItems,
    build_redeem_script,
    hash160,
    p2sh_address,
    render,
)
from .spend import PendingSpend, SigningError, multisig_script_sig, p2pkh_script_sig
from .tx import (
    LedgerError,
    Transaction,
    TxInput,
    TxOutput,
    UnknownPrevOut,
    coinbase,
    p2pkh_for,
    sighash,
    sign_digest,
    sign_input,
    verify_digest,
    verify_input,
)

__all__ = [
    "MAX_MULTISIG_ITEMS", "P2PKH", "P2SH", "UNKNOWN", "UNSPENT", "Chain", "DoubleSpend", "Immature",
    "InvalidM", "InvalidTransaction", "LedgerError", "Op", "PendingSpend", "RedeemScript",
    "ScriptError", "ScriptFailure", "SigningError", "TooManyItems", "Transaction", "TxInput",
    "TxOutput", "UnknownPrevOut", "UtxoStatus", "build_redeem_script", "coinbase", "eval_script",
    "format_transaction", "hash160", "multisig_script_sig", "p2pkh_for", "p2pkh_script_sig",
    "p2sh_address", "render", "sighash", "sign_digest", "sign_input", "verify_digest", "verify_input",
]
