#!/usr/bin/env python3
"""Independent reference values for the HKDF, key-schedule and primitive tests.

Built only on hashlib/hmac (and `cryptography` for AEAD and X25519), with no
code shared with the Rust implementation. Run from this directory; output
goes to ../tests/data/.
"""

import hashlib
import hmac
import os
import random

from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM, ChaCha20Poly1305
from cryptography.hazmat.primitives import serialization

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "tests", "data")
HASHES = {"sha256": hashlib.sha256, "sha384": hashlib.sha384}


def h(x):
    return x.hex() if x else "-"


def extract(alg, salt, ikm):
    n = HASHES[alg]().digest_size
    return hmac.new(salt if salt is not None else b"\0" * n, ikm, HASHES[alg]).digest()


def expand(alg, prk, info, length):
    out, block, i = b"", b"", 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([i]), HASHES[alg]).digest()
        out += block
        i += 1
    return out[:length]


def expand_label(alg, secret, label, context, length):
    full = b"tls13 " + label.encode()
    info = length.to_bytes(2, "big") + bytes([len(full)]) + full + bytes([len(context)]) + context
    return expand(alg, secret, info, length)


def derive_secret(alg, secret, label, messages):
    th = HASHES[alg](messages).digest()
    return expand_label(alg, secret, label, th, HASHES[alg]().digest_size)


def hkdf_vectors(rng):
    lines = []
    labels = ["derived", "c hs traffic", "s ap traffic", "key", "iv", "finished", "res binder", "x"]
    for alg in HASHES:
        n = HASHES[alg]().digest_size
        lines.append(f"extract {alg} - {'00' * n} {extract(alg, None, bytes(n)).hex()}")
        prk = extract(alg, b"\x0b" * 32, b"\x0c" * 32)
        lines.append(f"extract {alg} {'0b' * 32} {'0c' * 32} {prk.hex()}")
        lines.append(f"expand {alg} {prk.hex()} {b'test'.hex()} 42 {expand(alg, prk, b'test', 42).hex()}")
        lines.append(f"expand_label {alg} {'00' * n} derived - {n} {expand_label(alg, bytes(n), 'derived', b'', n).hex()}")
        early = extract(alg, None, bytes(n))
        lines.append(f"derive_secret {alg} {early.hex()} derived - {derive_secret(alg, early, 'derived', b'').hex()}")
        for _ in range(20):
            salt = rng.randbytes(rng.randint(0, 80)) if rng.random() < 0.8 else None
            ikm = rng.randbytes(rng.randint(0, 80))
            prk = extract(alg, salt, ikm)
            lines.append(f"extract {alg} {h(salt) if salt is not None else 'null'} {h(ikm)} {prk.hex()}")
            info = rng.randbytes(rng.randint(0, 60))
            length = rng.randint(1, 255 * n) if rng.random() < 0.3 else rng.randint(1, 3 * n)
            lines.append(f"expand {alg} {prk.hex()} {h(info)} {length} {expand(alg, prk, info, length).hex()}")
            label = rng.choice(labels)
            ctx = rng.randbytes(rng.choice([0, n, rng.randint(1, 255)]))
            length = rng.randint(1, 300)
            lines.append(
                f"expand_label {alg} {prk.hex()} {label.replace(' ', '_')} {h(ctx)} {length} "
                f"{expand_label(alg, prk, label, ctx, length).hex()}"
            )
            msgs = rng.randbytes(rng.randint(0, 200))
            lines.append(
                f"derive_secret {alg} {prk.hex()} {label.replace(' ', '_')} {h(msgs)} "
                f"{derive_secret(alg, prk, label, msgs).hex()}"
            )
    return lines


# Stand-in handshake messages for the chain; only their concatenations matter.
CHAIN_MESSAGES = [b"client hello", b"server hello", b"encrypted extensions", b"certificate",
                  b"certificate verify", b"server finished", b"client finished"]


def chain(alg, psk, ecdhe, nonce):
    n = HASHES[alg]().digest_size
    hash_of = lambda k: HASHES[alg](b"".join(CHAIN_MESSAGES[:k])).digest()
    th_ch, th_sh, th_sf, th_cf = hash_of(1), hash_of(2), hash_of(6), hash_of(7)
    ds = lambda s, label, th: expand_label(alg, s, label, th, n)
    empty = HASHES[alg](b"").digest()
    out = []
    early = extract(alg, None, psk if psk is not None else bytes(n))
    out += [("early_secret", early),
            ("ext_binder_key", ds(early, "ext binder", empty)),
            ("res_binder_key", ds(early, "res binder", empty)),
            ("client_early_traffic_secret", ds(early, "c e traffic", th_ch)),
            ("early_exporter_master_secret", ds(early, "e exp master", th_ch))]
    hs = extract(alg, ds(early, "derived", empty), ecdhe if ecdhe is not None else bytes(n))
    chts, shts = ds(hs, "c hs traffic", th_sh), ds(hs, "s hs traffic", th_sh)
    out += [("handshake_secret", hs), ("client_handshake_traffic_secret", chts),
            ("server_handshake_traffic_secret", shts)]
    ms = extract(alg, ds(hs, "derived", empty), bytes(n))
    cats, sats = ds(ms, "c ap traffic", th_sf), ds(ms, "s ap traffic", th_sf)
    rms = ds(ms, "res master", th_cf)
    out += [("master_secret", ms), ("client_application_traffic_secret_0", cats),
            ("server_application_traffic_secret_0", sats),
            ("exporter_master_secret", ds(ms, "exp master", th_sf)),
            ("resumption_master_secret", rms),
            ("client_handshake_finished_key", expand_label(alg, chts, "finished", b"", n)),
            ("server_handshake_finished_key", expand_label(alg, shts, "finished", b"", n)),
            ("client_application_traffic_secret_1", ds(cats, "traffic upd", empty)),
            ("resumption_psk", expand_label(alg, rms, "resumption", nonce, n))]
    key_len = 16 if alg == "sha256" else 32
    for name, secret in [("client_handshake", chts), ("server_handshake", shts),
                         ("client_application", cats), ("server_application", sats)]:
        out.append((f"{name}_key", expand_label(alg, secret, "key", b"", key_len)))
        out.append((f"{name}_iv", expand_label(alg, secret, "iv", b"", 12)))
    sfk = expand_label(alg, shts, "finished", b"", n)
    out.append(("server_verify_data", hmac.new(sfk, hash_of(5), HASHES[alg]).digest()))
    return out


def primitive_vectors(rng):
    lines = []
    for name, cls, klen in [("aes128gcm", AESGCM, 16), ("aes256gcm", AESGCM, 32),
                            ("chacha20poly1305", ChaCha20Poly1305, 32)]:
        for _ in range(3):
            key, nonce = rng.randbytes(klen), rng.randbytes(12)
            aad, pt = rng.randbytes(rng.randint(0, 13)), rng.randbytes(rng.randint(0, 70))
            ct = cls(key).encrypt(nonce, pt, aad)
            lines.append(f"aead {name} {key.hex()} {nonce.hex()} {h(aad)} {h(pt)} {ct.hex()}")
    for _ in range(3):
        a, b = rng.randbytes(32), rng.randbytes(32)
        ka = X25519PrivateKey.from_private_bytes(a)
        pub_b = X25519PrivateKey.from_private_bytes(b).public_key()
        raw = lambda k: k.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        lines.append(f"x25519 {a.hex()} {raw(ka.public_key()).hex()} {raw(pub_b).hex()} {ka.exchange(pub_b).hex()}")
    for alg in HASHES:
        for data in [b"", b"abc", rng.randbytes(300)]:
            lines.append(f"hash {alg} {h(data)} {HASHES[alg](data).hexdigest()}")
    return lines


def main():
    rng = random.Random(0x7e5713)
    with open(os.path.join(OUT, "hkdf_vectors.txt"), "w") as f:
        f.write("# op hash args... expected ('-' = empty, 'null' = absent salt, '_' in labels = space)\n")
        f.write("\n".join(hkdf_vectors(rng)) + "\n")
    for alg in HASHES:
        n = HASHES[alg]().digest_size
        with open(os.path.join(OUT, f"key_schedule_{alg}.txt"), "w") as f:
            f.write("# psk absent, ecdhe = 32 zero bytes, ticket nonce 00\n")
            for name, value in chain(alg, None, bytes(32), b"\x00"):
                f.write(f"{name} {value.hex()}\n")
    with open(os.path.join(OUT, "primitive_vectors.txt"), "w") as f:
        f.write("# aead alg key nonce aad plaintext ciphertext||tag / x25519 priv pub peer_pub shared / hash alg data digest\n")
        f.write("\n".join(primitive_vectors(rng)) + "\n")


if __name__ == "__main__":
    main()
