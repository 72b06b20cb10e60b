#include <gtest/gtest.h>

#include "blcm/protocol.hpp"

using namespace blcm;

namespace {

const char* kPriv = "4c0883a69102937d6231471b5dbb6204fe5129617082792ae468d01a3f362318";

PrivateKey priv() {
  PrivateKey k;
  auto raw = from_hex(kPriv);
  std::copy(raw.begin(), raw.end(), k.begin());
  return k;
}

Digest msg_hash() { return keccak256(std::string_view("blcm test message")); }

}  // namespace

// Reference values: OpenSSL deterministic ECDSA via the Python `cryptography`
// package, low-s normalized, recovery id found by independent point arithmetic.
TEST(Secp256k1, PublicKeyAndAddress) {
  auto pub = secp256k1::derive_public(priv());
  EXPECT_EQ(to_hex(pub),
            "4e3b81af9c2234cad09d679ce6035ed1392347ce64ce405f5dcd36228a25de6e"
            "47fd35c4215d1edf53e6f83de344615ce719bdb0fd878f6ed76f06dd277956de");
  EXPECT_EQ(derive_address(pub).str(), "0x2c7536e3605d9c16a7a3d7b1898e529396a65c23");
  EXPECT_EQ(KeyPair::from_hex(kPriv).address.str(), "0x2c7536e3605d9c16a7a3d7b1898e529396a65c23");
}

TEST(Secp256k1, DeterministicSignature) {
  EXPECT_EQ(msg_hash().hex(), "8688a129094b95fb74af70bfbd8a299225db36d66489b7f56991e740c168f16f");
  auto sig = secp256k1::sign(msg_hash(), priv());
  EXPECT_EQ(to_hex(sig),
            "1de602033a48eef2483c8d19ff13ded71ee51fe7d37763562abe69733cb4f3ce"
            "2081f596fabbc8915b239aa361cd5f869a79022ea73df312319335a930eae03e00");
  EXPECT_EQ(secp256k1::sign(msg_hash(), priv()), sig);
}

TEST(Secp256k1, RecoverRoundTrip) {
  for (int i = 0; i < 50; ++i) {
    auto k = secp256k1::random_private_key();
    auto pub = secp256k1::derive_public(k);
    auto h = keccak256(std::string_view(reinterpret_cast<const char*>(k.data()), 8));
    auto sig = secp256k1::sign(h, k);
    ASSERT_LE(sig[64], 1);
    // s in the lower half: top byte of s is at most 0x7f.
    ASSERT_LE(sig[32], 0x7f);
    ASSERT_EQ(secp256k1::recover(h, sig), pub);
  }
}

TEST(Secp256k1, TamperedSignatureDoesNotRecoverTheSigner) {
  auto sig = secp256k1::sign(msg_hash(), priv());
  auto pub = secp256k1::derive_public(priv());
  auto other = msg_hash();
  other.raw()[0] ^= 1;
  try {
    EXPECT_NE(secp256k1::recover(other, sig), pub);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadSignature);
  }
  auto bad = sig;
  bad[64] = 7;
  EXPECT_THROW(secp256k1::recover(msg_hash(), bad), Error);
  auto zero = sig;
  std::fill(zero.begin(), zero.begin() + 32, 0);
  EXPECT_THROW(secp256k1::recover(msg_hash(), zero), Error);
}

TEST(Secp256k1, RejectsInvalidKeysAndPoints) {
  PrivateKey zero{};
  EXPECT_THROW(secp256k1::derive_public(zero), Error);
  PrivateKey order;
  auto n = from_hex("fffffffffffffffffffffffffffffffebaaedce6af48a03bbfd25e8cd0364141");
  std::copy(n.begin(), n.end(), order.begin());
  EXPECT_THROW(secp256k1::derive_public(order), Error);
  auto pub = secp256k1::derive_public(priv());
  EXPECT_NO_THROW(secp256k1::validate_public(pub));
  pub[63] ^= 1;
  try {
    secp256k1::validate_public(pub);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidPoint);
  }
}
