"""Byte-level causal language model, small enough to train on a CPU.

Tokens are raw UTF-8 bytes plus three specials, so there is no external
tokenizer artifact to version: any text round-trips through encode/decode.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

PAD_ID = 256
BOS_ID = 257
EOS_ID = 258
VOCAB_SIZE = 259

CHECKPOINT_VERSION = 1


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_ids(ids: list[int]) -> str:
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class LMConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    max_seq: int = 640
    init_std: float = 0.02

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        for name in ("d_model", "n_heads", "n_layers", "d_ff", "max_seq"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


class CausalSelfAttention(nn.Module):
    """Multi-head attention with separate q/k/v/out projections.

    The projections are plain nn.Linear modules so adapters can wrap them
    individually.
    """

    def __init__(self, config: LMConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.d_model // config.n_heads
        self.q_proj = nn.Linear(config.d_model, config.d_model)
        self.k_proj = nn.Linear(config.d_model, config.d_model)
        self.v_proj = nn.Linear(config.d_model, config.d_model)
        self.out_proj = nn.Linear(config.d_model, config.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape

        def split(proj):
            return proj(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q_proj), split(self.k_proj), split(self.v_proj)
        out = torch.nn.functional.scaled_dot_product_attention(q, k, v, is_causal=True)
        out = out.transpose(1, 2).reshape(b, t, d)
        return self.out_proj(out)


class Block(nn.Module):
    def __init__(self, config: LMConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.ff = nn.Sequential(
            nn.Linear(config.d_model, config.d_ff),
            nn.GELU(),
            nn.Linear(config.d_ff, config.d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.ff(self.ln2(x))
        return x


class TinyCausalLM(nn.Module):
    def __init__(self, config: LMConfig | None = None):
        super().__init__()
        self.config = config or LMConfig()
        c = self.config
        self.tok_emb = nn.Embedding(VOCAB_SIZE, c.d_model)
        self.pos_emb = nn.Embedding(c.max_seq, c.d_model)
        self.blocks = nn.ModuleList(Block(c) for _ in range(c.n_layers))
        self.ln_f = nn.LayerNorm(c.d_model)
        self.head = nn.Linear(c.d_model, VOCAB_SIZE, bias=False)
        self.apply(self._init_weights)

    def _init_weights(self, module: nn.Module) -> None:
        std = self.config.init_std
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=std)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        b, t = ids.shape
        if t > self.config.max_seq:
            raise ValueError(f"sequence length {t} exceeds max_seq {self.config.max_seq}")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))

    @torch.no_grad()
    def generate_text(
        self,
        prompt: str,
        max_new_tokens: int,
        temperature: float = 0.0,
        seed: int = 0,
    ) -> str:
        """Decode from the prompt: greedy at temperature 0, else seeded sampling.

        Stops at EOS or when the context window fills.  The prompt is
        truncated on the left if it alone exceeds the window.
        """
        self.eval()
        ids = [BOS_ID] + encode_text(prompt)
        budget = self.config.max_seq - 1
        if len(ids) > budget:
            ids = ids[-budget:]
        gen = torch.Generator().manual_seed(seed)
        out: list[int] = []
        for _ in range(max_new_tokens):
            window = torch.tensor([ids[-self.config.max_seq:]], dtype=torch.long)
            logits = self(window)[0, -1]
            if temperature > 0.0:
                probs = torch.softmax(logits / temperature, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=gen).item())
            else:
                nxt = int(torch.argmax(logits).item())
            if nxt == EOS_ID:
                break
            ids.append(nxt)
            out.append(nxt)
            if len(ids) >= self.config.max_seq:
                break
        return decode_ids(out)


def new_lm(seed: int = 0, config: LMConfig | None = None) -> TinyCausalLM:
    torch.manual_seed(seed)
    return TinyCausalLM(config)


def save_lm(model: TinyCausalLM, path: str) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "config": asdict(model.config),
            "state": model.state_dict(),
        },
        path,
    )


def load_lm(path: str) -> TinyCausalLM:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint {path}: unsupported or missing format_version")
    model = TinyCausalLM(LMConfig(**blob["config"]))
    model.load_state_dict(blob["state"])
    return model
