#include "blcm/secp256k1.hpp"

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/obj_mac.h>
#include <openssl/rand.h>

#include <memory>

namespace blcm::secp256k1 {
namespace {

struct BnFree {
  void operator()(BIGNUM* b) const { BN_clear_free(b); }
};
struct BnCtxFree {
  void operator()(BN_CTX* c) const { BN_CTX_free(c); }
};
struct PointFree {
  void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnFree>;
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxFree>;
using PointPtr = std::unique_ptr<EC_POINT, PointFree>;

BnPtr new_bn() {
  BnPtr b(BN_new());
  if (!b) throw std::bad_alloc();
  return b;
}

BnPtr bn_from(ByteView big_endian) {
  BnPtr b(BN_bin2bn(big_endian.data(), static_cast<int>(big_endian.size()), nullptr));
  if (!b) throw std::bad_alloc();
  return b;
}

void bn_to32(const BIGNUM* b, std::uint8_t* out) {
  if (BN_bn2binpad(b, out, 32) != 32) throw Error(ErrorCode::InvalidArgument, "scalar exceeds 32 bytes");
}

class Curve {
 public:
  Curve() : group_(EC_GROUP_new_by_curve_name(NID_secp256k1)) {
    if (!group_) throw Error(ErrorCode::InvalidArgument, "secp256k1 unavailable in libcrypto");
    order_ = BnPtr(BN_dup(EC_GROUP_get0_order(group_)));
    half_order_ = BnPtr(BN_dup(order_.get()));
    BN_rshift1(half_order_.get(), half_order_.get());
  }
  ~Curve() { EC_GROUP_free(group_); }
  Curve(const Curve&) = delete;
  Curve& operator=(const Curve&) = delete;

  const EC_GROUP* group() const { return group_; }
  const BIGNUM* order() const { return order_.get(); }
  const BIGNUM* half_order() const { return half_order_.get(); }

  PointPtr new_point() const {
    PointPtr p(EC_POINT_new(group_));
    if (!p) throw std::bad_alloc();
    return p;
  }

 private:
  EC_GROUP* group_;
  BnPtr order_;
  BnPtr half_order_;
};

const Curve& curve() {
  static const Curve instance;
  return instance;
}

BN_CTX* thread_ctx() {
  thread_local BnCtxPtr ctx(BN_CTX_new());
  return ctx.get();
}

bool valid_scalar(const BIGNUM* k) {
  return !BN_is_zero(k) && !BN_is_negative(k) && BN_cmp(k, curve().order()) < 0;
}

PublicKey encode_point(const EC_POINT* point) {
  std::array<std::uint8_t, 65> buf{};
  std::size_t n = EC_POINT_point2oct(curve().group(), point, POINT_CONVERSION_UNCOMPRESSED,
                                     buf.data(), buf.size(), thread_ctx());
  if (n != 65) throw Error(ErrorCode::InvalidPoint, "point at infinity");
  PublicKey out;
  std::copy(buf.begin() + 1, buf.end(), out.begin());
  return out;
}

PointPtr decode_point(const PublicKey& key) {
  std::array<std::uint8_t, 65> buf{};
  buf[0] = 0x04;
  std::copy(key.begin(), key.end(), buf.begin() + 1);
  auto point = curve().new_point();
  if (EC_POINT_oct2point(curve().group(), point.get(), buf.data(), buf.size(), thread_ctx()) != 1 ||
      EC_POINT_is_on_curve(curve().group(), point.get(), thread_ctx()) != 1)
    throw Error(ErrorCode::InvalidPoint, "public key is not a secp256k1 point");
  return point;
}

using Hmac32 = std::array<std::uint8_t, 32>;

Hmac32 hmac_sha256(const Hmac32& key, ByteView data) {
  Hmac32 out{};
  unsigned int len = 0;
  if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
            out.data(), &len))
    throw Error(ErrorCode::InvalidArgument, "HMAC-SHA256 failed");
  return out;
}

/// RFC 6979 section 3.2 nonce generator for qlen = hlen = 256.
class NonceGenerator {
 public:
  NonceGenerator(const PrivateKey& key, const std::array<std::uint8_t, 32>& reduced_hash) {
    v_.fill(0x01);
    k_.fill(0x00);
    seed(0x00, key, reduced_hash);
    v_ = hmac_sha256(k_, v_);
    seed(0x01, key, reduced_hash);
    v_ = hmac_sha256(k_, v_);
  }

  BnPtr next() {
    if (!first_) {
      Bytes buf(v_.begin(), v_.end());
      buf.push_back(0x00);
      k_ = hmac_sha256(k_, buf);
      v_ = hmac_sha256(k_, v_);
    }
    first_ = false;
    v_ = hmac_sha256(k_, v_);
    return bn_from(v_);
  }

 private:
  void seed(std::uint8_t sep, const PrivateKey& key, const std::array<std::uint8_t, 32>& h) {
    Bytes buf(v_.begin(), v_.end());
    buf.push_back(sep);
    buf.insert(buf.end(), key.begin(), key.end());
    buf.insert(buf.end(), h.begin(), h.end());
    k_ = hmac_sha256(k_, buf);
  }

  Hmac32 v_{};
  Hmac32 k_{};
  bool first_ = true;
};

}  // namespace

PublicKey derive_public(const PrivateKey& key) {
  auto d = bn_from(key);
  if (!valid_scalar(d.get())) throw Error(ErrorCode::InvalidKey, "private key outside [1, n)");
  auto q = curve().new_point();
  if (EC_POINT_mul(curve().group(), q.get(), d.get(), nullptr, nullptr, thread_ctx()) != 1)
    throw Error(ErrorCode::InvalidKey, "scalar multiplication failed");
  return encode_point(q.get());
}

void validate_public(const PublicKey& point) { decode_point(point); }

RecoverableSignature sign(const Digest& message_hash, const PrivateKey& key) {
  const auto& c = curve();
  BN_CTX* ctx = thread_ctx();
  auto d = bn_from(key);
  if (!valid_scalar(d.get())) throw Error(ErrorCode::InvalidKey, "private key outside [1, n)");

  auto z = bn_from(message_hash.view());
  BN_nnmod(z.get(), z.get(), c.order(), ctx);
  std::array<std::uint8_t, 32> reduced{};
  bn_to32(z.get(), reduced.data());

  NonceGenerator nonces(key, reduced);
  auto r = new_bn(), s = new_bn(), x = new_bn(), y = new_bn(), kinv = new_bn();
  auto point = c.new_point();
  for (;;) {
    auto k = nonces.next();
    if (!valid_scalar(k.get())) continue;
    EC_POINT_mul(c.group(), point.get(), k.get(), nullptr, nullptr, ctx);
    EC_POINT_get_affine_coordinates(c.group(), point.get(), x.get(), y.get(), ctx);
    BN_nnmod(r.get(), x.get(), c.order(), ctx);
    if (BN_is_zero(r.get())) continue;
    int recid = (BN_is_odd(y.get()) ? 1 : 0) | (BN_cmp(x.get(), c.order()) >= 0 ? 2 : 0);

    // s = k^-1 (z + r d) mod n
    BN_mod_inverse(kinv.get(), k.get(), c.order(), ctx);
    BN_mod_mul(s.get(), r.get(), d.get(), c.order(), ctx);
    BN_mod_add(s.get(), s.get(), z.get(), c.order(), ctx);
    BN_mod_mul(s.get(), s.get(), kinv.get(), c.order(), ctx);
    if (BN_is_zero(s.get())) continue;
    if (BN_cmp(s.get(), c.half_order()) > 0) {
      BN_sub(s.get(), c.order(), s.get());
      recid ^= 1;
    }

    RecoverableSignature sig{};
    bn_to32(r.get(), sig.data());
    bn_to32(s.get(), sig.data() + 32);
    sig[64] = static_cast<std::uint8_t>(recid);
    return sig;
  }
}

PublicKey recover(const Digest& message_hash, const RecoverableSignature& signature) {
  const auto& c = curve();
  BN_CTX* ctx = thread_ctx();
  int recid = signature[64];
  if (recid > 3) throw Error(ErrorCode::BadSignature, "recovery id out of range");
  auto r = bn_from({signature.data(), 32});
  auto s = bn_from({signature.data() + 32, 32});
  if (!valid_scalar(r.get()) || !valid_scalar(s.get()))
    throw Error(ErrorCode::BadSignature, "signature scalar out of range");

  auto x = new_bn();
  BN_copy(x.get(), r.get());
  if (recid & 2) BN_add(x.get(), x.get(), c.order());
  auto big_r = c.new_point();
  if (EC_POINT_set_compressed_coordinates(c.group(), big_r.get(), x.get(), recid & 1, ctx) != 1)
    throw Error(ErrorCode::BadSignature, "signature does not name a curve point");

  // Q = r^-1 (s R - z G)
  auto z = bn_from(message_hash.view());
  BN_nnmod(z.get(), z.get(), c.order(), ctx);
  auto rinv = new_bn(), u1 = new_bn(), u2 = new_bn();
  BN_mod_inverse(rinv.get(), r.get(), c.order(), ctx);
  BN_mod_mul(u1.get(), z.get(), rinv.get(), c.order(), ctx);
  BN_mod_sub(u1.get(), c.order(), u1.get(), c.order(), ctx);
  BN_mod_mul(u2.get(), s.get(), rinv.get(), c.order(), ctx);

  auto q = c.new_point();
  if (EC_POINT_mul(c.group(), q.get(), u1.get(), big_r.get(), u2.get(), ctx) != 1 ||
      EC_POINT_is_at_infinity(c.group(), q.get()))
    throw Error(ErrorCode::BadSignature, "recovered point at infinity");
  return encode_point(q.get());
}

PrivateKey random_private_key() {
  PrivateKey key{};
  for (;;) {
    if (RAND_bytes(key.data(), static_cast<int>(key.size())) != 1)
      throw Error(ErrorCode::InvalidKey, "RAND_bytes failed");
    auto d = bn_from(key);
    if (valid_scalar(d.get())) return key;
  }
}

}  // namespace blcm::secp256k1
