"""Cross-chain channel network laboratory."""
