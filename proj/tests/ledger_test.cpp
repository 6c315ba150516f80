#include <gtest/gtest.h>

#include "iotchain/merkle.hpp"
#include "ledger_fixture.hpp"
#include "tx_gen.hpp"

using namespace fixture;
using tx::Operation;

namespace {

struct LedgerTest : ::testing::Test {
  World w;
  Ledger ledger{w.genesis};
  RnTables tables = replay(ledger);

  const Block& commit(std::vector<Transaction> txs, ValidationOptions o = {}) {
    return append_block(ledger, tables, w.keys, std::move(txs), o);
  }
  ValidationResult check(const Transaction& t, ValidationOptions o = {}) { return validate(t, tables, w.keys, o); }
};

}  // namespace

TEST_F(LedgerTest, GenesisIsHeightZeroAndAnchorsCc) {
  EXPECT_EQ(ledger.height(), 0u);
  EXPECT_EQ(ledger.genesis().prev_hash, hash(w.cc.public_key.view()));
  EXPECT_TRUE(ledger.verify_chain());
  EXPECT_TRUE(tables.entity_active(EntityClass::CertificationCenter, 0));
  EXPECT_TRUE(tables.entity_active(EntityClass::Manufacturer, 7));
  EXPECT_TRUE(tables.entity_active(EntityClass::RegionalNode, 2));
}

TEST_F(LedgerTest, UpdateReleaseByRegisteredManufacturerAccepted) {
  EXPECT_TRUE(check(w.release(w.mfrs[7], 7, 1, "fw-1.0")).ok());
}

TEST_F(LedgerTest, UpdateReleaseByUnregisteredKeyIsUnknownSigner) {
  auto stranger = generate_keypair(w.rng);
  auto r = check(w.release(stranger, 99, 1, "fw"));
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(*r.reason, RejectReason::UnknownSigner);
}

TEST_F(LedgerTest, UpdateReleaseWithWrongKeyIsBadSignature) {
  auto r = check(w.release(w.mfrs[8], 7, 1, "fw"));
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(*r.reason, RejectReason::BadSignature);
}

TEST_F(LedgerTest, CancelThenSubmitIsCancelledSigner) {
  commit({w.cancel(w.dc, EntityClass::Manufacturer, 7)});
  auto r = check(w.release(w.mfrs[7], 7, 1, "fw"));
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(*r.reason, RejectReason::CancelledSigner);
  // Cancelled entities stay cancelled; a second cancellation is refused.
  EXPECT_FALSE(check(w.cancel(w.cc, EntityClass::Manufacturer, 7)).ok());
}

TEST_F(LedgerTest, CancelledManufacturerCannotRegisterDevices) {
  auto dev = w.make_device(7, 1, 1);
  commit({w.cancel(w.cc, EntityClass::Manufacturer, 7)});
  EXPECT_EQ(*check(w.register_device(dev)).reason, RejectReason::CancelledSigner);
}

TEST_F(LedgerTest, CancellationRequiresCcOrDc) {
  auto r = check(w.cancel(w.mfrs[8], EntityClass::Manufacturer, 7));
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(*r.reason, RejectReason::BadSignature);
  EXPECT_FALSE(check(w.cancel(w.cc, EntityClass::CertificationCenter, 0)).ok());
}

TEST_F(LedgerTest, ReRegistrationAfterCancellationNeedsFreshKey) {
  commit({w.cancel(w.cc, EntityClass::Manufacturer, 8)});
  auto old_key = w.key_of(EntityClass::Manufacturer, 8);
  auto reuse = make_entity_registration(w.cc, EntityClass::Manufacturer, 8, old_key);
  EXPECT_EQ(*check(reuse).reason, RejectReason::SchemaViolation);
  auto fresh = generate_keypair(w.rng);
  auto fresh_id = w.publish_entity(fresh, EntityClass::Manufacturer, 8);
  auto again = make_entity_registration(w.cc, EntityClass::Manufacturer, 8, fresh_id);
  EXPECT_TRUE(check(again).ok());
  commit({again});
  EXPECT_TRUE(check(w.release(fresh, 8, 1, "fw")).ok());
}

TEST_F(LedgerTest, DuplicateLiveRegistrationRejected) {
  auto dev = w.make_device(7, 3, 1);
  commit({w.register_device(dev)});
  EXPECT_EQ(*check(w.register_device(dev)).reason, RejectReason::SchemaViolation);
  EXPECT_THROW(apply_to_tables(tables, w.register_device(dev)), LedgerError);

  auto dup_rn = make_entity_registration(w.cc, EntityClass::RegionalNode, 1,
                                         w.publish_entity(generate_keypair(w.rng), EntityClass::RegionalNode, 1));
  EXPECT_EQ(*check(dup_rn).reason, RejectReason::SchemaViolation);
}

TEST_F(LedgerTest, DeviceKeyMustCarryManufacturerCertificate) {
  auto rogue = generate_keypair(w.rng);
  std::uint32_t id = (7u << 16) | 50;
  w.keys.publish(id, KeyRecord{rogue.public_key, issue_certificate(w.mfrs[8], 7, rogue.public_key), 1});
  EXPECT_EQ(*check(w.register_device(id)).reason, RejectReason::SchemaViolation);
  // Device id outside the manufacturer's range.
  auto other = w.make_device(8, 1, 1);
  tx::DeviceRegistrationTx mis{7, other, {}};
  mis.signature = sign(w.mfrs[7].secret_key, tx::signing_bytes(mis));
  EXPECT_EQ(*check(mis).reason, RejectReason::SchemaViolation);
}

TEST_F(LedgerTest, CloudProviderRegistrationIsLocalToAnRn) {
  auto cp = generate_keypair(w.rng);
  auto key = w.publish_entity(cp, EntityClass::CloudProvider, 1);
  auto reg = make_entity_registration(w.rns[1], EntityClass::CloudProvider, 1, key);
  EXPECT_EQ(*check(reg).reason, RejectReason::SchemaViolation);
  EXPECT_TRUE(check(reg, {.local_rn = 1}).ok());
  EXPECT_EQ(*check(reg, {.local_rn = 2}).reason, RejectReason::BadSignature);
}

TEST_F(LedgerTest, PermissionReleaseThenLookup) {
  auto d1 = w.make_device(7, 1, 1);
  auto d2 = w.make_device(7, 2, 1);
  tx::PermissionTx rel{false, d1, d2, Operation::Read, {}};
  EXPECT_EQ(*check(rel).reason, RejectReason::SchemaViolation);
  commit({w.register_device(d1), w.register_device(d2)});
  commit({rel});
  EXPECT_TRUE(tables.permits(d1, d2, Operation::Read));
  EXPECT_FALSE(tables.permits(d1, d2, Operation::Write));
  EXPECT_FALSE(tables.permits(d2, d1, Operation::Read));
  EXPECT_EQ(tables.permissions.at({d1, d2}), (std::set<Operation>{Operation::Read}));
}

TEST_F(LedgerTest, PermissionRequestIsReadOnly) {
  auto d1 = w.make_device(7, 1, 1);
  auto d2 = w.make_device(7, 2, 1);
  commit({w.register_device(d1), w.register_device(d2)});
  tx::PermissionTx req{true, d1, d2, Operation::Write, {Signature{}}};
  req.signatures[0] = sign(w.devices[d1].secret_key, tx::signing_bytes(req));
  ASSERT_TRUE(check(req).ok());
  auto before = tables;
  apply_to_tables(tables, req);
  apply_to_tables(tables, tx::UpdateQueryTx{7, 1});
  EXPECT_EQ(tables, before);
  // Signed by the wrong device.
  req.signatures[0] = sign(w.devices[d2].secret_key, tx::signing_bytes(req));
  EXPECT_EQ(*check(req).reason, RejectReason::BadSignature);
}

TEST_F(LedgerTest, CrossRegionPermissionNeedsBothRegionalNodes) {
  auto d1 = w.make_device(7, 1, 1);
  auto d2 = w.make_device(8, 1, 2);
  auto good = w.cross_region(false, d1, 1, d2, 2, Operation::Read);
  EXPECT_TRUE(check(good).ok());
  auto swapped = w.cross_region(false, d1, 2, d2, 1, Operation::Read);
  EXPECT_EQ(*check(swapped).reason, RejectReason::BadSignature);
  auto d3 = w.make_device(8, 2, 1);
  EXPECT_EQ(*check(w.cross_region(false, d1, 1, d3, 1, Operation::Read)).reason, RejectReason::SchemaViolation);
  commit({w.cancel(w.dc, EntityClass::RegionalNode, 2)});
  EXPECT_EQ(*check(good).reason, RejectReason::CancelledSigner);
}

TEST_F(LedgerTest, StorageIntegrityCheck) {
  auto dev = w.make_device(7, 4, 1);
  Bytes data = to_bytes("sensor frame 7");
  commit({w.storage(dev, 7, data)});
  const Digest& h = tables.storage_info.at({dev, 7});
  EXPECT_EQ(hash(data), h);
  Bytes tampered = data;
  tampered[0] ^= 1;
  EXPECT_NE(hash(tampered), h);
}

TEST_F(LedgerTest, StorageFromUnknownDeviceRejected) {
  auto stranger = generate_keypair(w.rng);
  tx::DeviceStorageTx t{0x70099, 1, 0, hash(to_bytes("x")), {}};
  t.signature = sign(stranger.secret_key, tx::signing_bytes(t));
  EXPECT_EQ(*check(t).reason, RejectReason::UnknownSigner);
}

TEST_F(LedgerTest, LocalInteractiveSignedByRn) {
  auto l = w.local_root(1, hash(to_bytes("root")), 3);
  EXPECT_TRUE(check(l).ok());
  l.rn_id = 2;
  EXPECT_EQ(*check(l).reason, RejectReason::BadSignature);
  EXPECT_FALSE(check(w.local_root(1, hash(to_bytes("root")), 0)).ok());
}

TEST_F(LedgerTest, BatchIsAtomic) {
  auto dev = w.make_device(7, 5, 1);
  auto stranger = generate_keypair(w.rng);
  std::vector<Transaction> batch{w.register_device(dev), w.release(stranger, 7, 1, "x")};
  auto before = tables;
  try {
    commit(batch);
    FAIL() << "expected rejection";
  } catch (const BatchRejected& e) {
    EXPECT_EQ(e.index(), 1u);
    EXPECT_EQ(*e.result().reason, RejectReason::BadSignature);
  }
  EXPECT_EQ(ledger.height(), 0u);
  EXPECT_EQ(tables, before);
}

TEST_F(LedgerTest, BatchSeesEarlierEffects) {
  // Cancellation earlier in the same block disqualifies a later release.
  std::vector<Transaction> batch{w.cancel(w.cc, EntityClass::Manufacturer, 7), w.release(w.mfrs[7], 7, 1, "x")};
  std::size_t bad = 99;
  auto r = validate_batch(batch, tables, w.keys, {}, &bad);
  EXPECT_EQ(bad, 1u);
  EXPECT_EQ(*r.reason, RejectReason::CancelledSigner);
}

namespace {

// Builds a ledger of random valid activity, tracking the local batches
// behind each confirmed root.
struct Activity {
  std::map<Digest, std::vector<Transaction>> batches;
  LocalBatchLookup lookup() const {
    return [this](const tx::LocalInteractiveTx& l) -> const std::vector<Transaction>* {
      auto it = batches.find(l.merkle_root);
      return it == batches.end() ? nullptr : &it->second;
    };
  }
};

void grow(World& w, Ledger& ledger, RnTables& tables, Activity& act, int blocks, DeterministicRng& rng) {
  std::uint16_t serial = 100;
  std::vector<std::uint32_t> live;
  for (int b = 0; b < blocks; ++b) {
    std::vector<Transaction> txs;
    // A local batch of device registrations confirmed through its root.
    std::vector<Transaction> local;
    for (int i = 0; i < 3; ++i) {
      auto mid = static_cast<std::uint16_t>(rng.next() % 2 ? 7 : 8);
      auto dev = w.make_device(mid, serial++, 1);
      local.push_back(w.register_device(dev));
      live.push_back(dev);
    }
    std::vector<Digest> leaves;
    for (auto& t : local) leaves.push_back(tx::tx_digest(t));
    merkle::MerkleTree tree(leaves);
    act.batches[tree.root()] = local;
    txs.push_back(w.local_root(1, tree.root(), static_cast<std::uint16_t>(local.size())));
    txs.push_back(w.release(w.mfrs[7], 7, static_cast<std::uint16_t>(rng.next() % 4), "fw-" + std::to_string(b)));
    if (!live.empty()) {
      auto dev = live[rng.next() % live.size()];
      txs.push_back(w.storage(dev, static_cast<std::uint16_t>(b), to_bytes("d" + std::to_string(b))));
    }
    append_block(ledger, tables, w.keys, txs);
    for (auto& t : local) apply_to_tables(tables, t);
  }
}

}  // namespace

TEST(LedgerReplay, ReplayReconstructsLiveTables) {
  World w;
  Ledger ledger(w.genesis);
  RnTables tables = replay(ledger);
  Activity act;
  DeterministicRng rng(9);
  grow(w, ledger, tables, act, 25, rng);
  EXPECT_EQ(ledger.height(), 25u);
  EXPECT_TRUE(ledger.verify_chain());
  EXPECT_EQ(replay(ledger, act.lookup()), tables);
  // Without the local batches only the direct effects come back.
  EXPECT_NE(replay(ledger), tables);
  EXPECT_TRUE(audit_chain(ledger, w.keys).clean());
}

TEST(LedgerChain, AnyByteMutationOfHistoryDetected) {
  World w;
  Ledger ledger(w.genesis);
  RnTables tables = replay(ledger);
  Activity act;
  DeterministicRng rng(10);
  grow(w, ledger, tables, act, 6, rng);
  std::size_t tried = 0;
  for (std::size_t bi = 0; bi < ledger.blocks().size(); ++bi) {
    const Block& original = ledger.blocks()[bi];
    for (std::size_t ti = 0; ti < original.txs.size(); ++ti) {
      auto entry = tx::chain_bytes(original.txs[ti]);
      for (std::size_t byte = 0; byte < entry.size(); ++byte) {
        auto mutated = entry;
        mutated[byte] ^= 0x20;
        Transaction changed;
        try {
          changed = tx::decode_chain_entry(mutated);
        } catch (const tx::TxDecodeError&) {
          continue;
        }
        // The chained payload digest is derived from the payload, so a change
        // there is a change of payload.
        if (auto* u = std::get_if<tx::UpdateReleaseTx>(&changed)) {
          u->payload = std::get<tx::UpdateReleaseTx>(original.txs[ti]).payload;
          if (byte >= tx::size::kUpdateReleaseHeader) u->payload[(byte - tx::size::kUpdateReleaseHeader) % u->payload.size()] ^= 0x20;
        }
        auto blocks = ledger.blocks();
        blocks[bi].txs[ti] = changed;
        ++tried;
        ASSERT_FALSE(Ledger::from_blocks(blocks).verify_chain()) << "block " << bi << " tx " << ti << " byte " << byte;
      }
    }
    for (std::size_t byte = 0; byte < kDigestSize; ++byte) {
      auto blocks = ledger.blocks();
      blocks[bi].prev_hash.bytes[byte] ^= 1;
      ASSERT_FALSE(Ledger::from_blocks(blocks).verify_chain());
      blocks = ledger.blocks();
      blocks[bi].block_hash.bytes[byte] ^= 1;
      ASSERT_FALSE(Ledger::from_blocks(blocks).verify_chain());
    }
    auto blocks = ledger.blocks();
    blocks[bi].height ^= 1;
    ASSERT_FALSE(Ledger::from_blocks(blocks).verify_chain());
  }
  EXPECT_GT(tried, 1000u);
}

TEST(LedgerChain, AppendBlockRefusesBrokenLink) {
  World w;
  Ledger a(w.genesis);
  Block b{1, hash(to_bytes("elsewhere")), {}, {}};
  b.block_hash = compute_block_hash(1, b.prev_hash, b.txs);
  EXPECT_THROW(a.append_block(b), LedgerError);
  b.prev_hash = a.tip().block_hash;
  b.block_hash = compute_block_hash(1, b.prev_hash, b.txs);
  a.append_block(b);
  EXPECT_EQ(a.height(), 1u);
}

TEST(LedgerChain, BlockWireRoundTrip) {
  World w;
  Ledger ledger(w.genesis);
  RnTables tables = replay(ledger);
  Activity act;
  DeterministicRng rng(11);
  grow(w, ledger, tables, act, 4, rng);
  for (const auto& b : ledger.blocks()) EXPECT_EQ(decode_block(encode_block(b)), b);
  auto bytes = encode_block(ledger.tip());
  bytes[bytes.size() / 2] ^= 1;
  EXPECT_ANY_THROW(decode_block(bytes));
  auto batch = ledger.tip().txs;
  EXPECT_EQ(decode_batch(encode_batch(batch)), batch);
}

TEST(LedgerChain, ExportIsOneLinePerBlock) {
  World w;
  Ledger ledger(w.genesis);
  ledger.append({tx::UpdateQueryTx{7, 1}});
  auto text = ledger.export_text();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_NE(text.find("height=1 prev=" + ledger.genesis().block_hash.hex()), std::string::npos);
  EXPECT_NE(text.find("txs=0500070001"), std::string::npos);
}

TEST(LedgerAudit, ForgedTransactionFlagged) {
  World w;
  Ledger ledger(w.genesis);
  auto forger = generate_keypair(w.rng);
  ledger.append({w.release(w.mfrs[7], 7, 1, "ok")});
  ledger.append({w.release(forger, 7, 2, "evil")});
  auto report = audit_chain(ledger, w.keys);
  EXPECT_TRUE(report.chain_intact);
  ASSERT_EQ(report.invalid_transactions.size(), 1u);
  EXPECT_EQ(report.invalid_transactions[0].height, 2u);
  EXPECT_EQ(*report.invalid_transactions[0].result.reason, RejectReason::BadSignature);
}

// Classification oracle, written out type by type.
TEST(Classify, MatchesTransactionTable) {
  using M = Mode;
  Signature s;
  Digest d;
  EXPECT_EQ(classify(tx::EntityRegistrationTx{EntityClass::Manufacturer, 1, 1, s}), M::Direct);
  EXPECT_EQ(classify(tx::EntityRegistrationTx{EntityClass::RegionalNode, 1, 1, s}), M::Direct);
  EXPECT_EQ(classify(tx::EntityRegistrationTx{EntityClass::CloudProvider, 1, 1, s}), M::MerkleBatched);
  EXPECT_EQ(classify(tx::DeviceRegistrationTx{1, 0x10001, s}), M::MerkleBatched);
  EXPECT_EQ(classify(tx::UpdateReleaseTx{1, 1, s, {}}), M::Direct);
  EXPECT_EQ(classify(tx::UpdateReleaseTx{1, 1, s, {}}, std::nullopt, 3), M::MerkleBatched);
  EXPECT_EQ(classify(tx::UpdateQueryTx{1, 1}), M::MerkleBatched);
  EXPECT_EQ(classify(tx::DeviceStorageTx{1, 1, 0, d, s}), M::Direct);
  EXPECT_EQ(classify(tx::PermissionTx{false, 1, 2, Operation::Read, {}}, 1, 1), M::MerkleBatched);
  EXPECT_EQ(classify(tx::PermissionTx{true, 1, 2, Operation::Read, {s}}, 1, 1), M::MerkleBatched);
  EXPECT_EQ(classify(tx::PermissionTx{false, 1, 2, Operation::Read, {s, s}}, 1, 2), M::Direct);
  EXPECT_EQ(classify(tx::PermissionTx{true, 1, 2, Operation::Read, {s, s}}, 1, 2), M::Direct);
  EXPECT_EQ(classify(tx::CancellationTx{EntityClass::Manufacturer, 1, 1, s}), M::Direct);
  EXPECT_EQ(classify(tx::LocalInteractiveTx{1, d, 1, s}), M::Direct);
}

TEST(Classify, TotalOverRandomTransactions) {
  DeterministicRng rng(12);
  for (int i = 0; i < 2000; ++i) {
    auto t = gen::random_tx(rng);
    auto m = classify(t);
    EXPECT_TRUE(m == Mode::Direct || m == Mode::MerkleBatched);
  }
}

TEST_F(LedgerTest, ProviderCancellationSameVerdictEverywhere) {
  auto cp = generate_keypair(w.rng);
  auto key = w.publish_entity(cp, EntityClass::CloudProvider, 3);
  auto reg = make_entity_registration(w.rns[1], EntityClass::CloudProvider, 3, key);
  RnTables home = tables;
  ASSERT_TRUE(validate(reg, home, w.keys, {.local_rn = 1}).ok());
  apply_to_tables(home, reg);
  auto cancel = w.cancel(w.dc, EntityClass::CloudProvider, 3);
  // Home node holds the row, a remote node does not; both accept.
  EXPECT_TRUE(validate(cancel, home, w.keys).ok());
  EXPECT_TRUE(check(cancel).ok());
  apply_to_tables(home, cancel);
  apply_to_tables(tables, cancel);
  EXPECT_EQ(home.row(key)->status, Status::Cancelled);
  EXPECT_EQ(tables.row(key)->status, Status::Cancelled);
  EXPECT_FALSE(home.entity_active(EntityClass::CloudProvider, 3));
}
