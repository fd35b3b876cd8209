#include "entbias/store.hpp"

#include <algorithm>
#include <ostream>

#include "entbias/error.hpp"
#include "entbias/log.hpp"

namespace entbias {
namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_le32(const std::string& bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]);
  }
  return v;
}

// Parses complete records; returns the offset just past the last good one.
std::size_t parse_log(const std::string& bytes, const std::filesystem::path& path,
                      std::vector<Observation>& out) {
  std::size_t pos = 0;
  while (pos + 4 <= bytes.size()) {
    const std::uint32_t len = read_le32(bytes, pos);
    if (pos + 4 + len > bytes.size()) break;
    const std::string_view payload(bytes.data() + pos + 4, len);
    try {
      out.push_back(Observation::from_json(Json::parse(payload)));
    } catch (const std::exception& e) {
      if (pos + 4 + len == bytes.size()) break;  // torn final record
      throw Error(ErrorCode::kIo, path.string() + ": corrupt record at offset " +
                                      std::to_string(pos) + ": " + e.what());
    }
    pos += 4 + len;
  }
  return pos;
}

}  // namespace

ObservationStore::ObservationStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  const std::string bytes = read_all(path_);
  std::vector<Observation> records;
  const std::size_t good = parse_log(bytes, path_, records);
  if (good < bytes.size()) {
    replay_.torn_bytes = bytes.size() - good;
    log::warn(path_.string() + ": truncating " + std::to_string(replay_.torn_bytes) +
              " bytes of torn tail");
    std::filesystem::resize_file(path_, good);
  }
  replay_.records = records.size();
  for (auto& o : records) apply(std::move(o));
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorCode::kIo, "cannot open store " + path_.string());
}

void ObservationStore::apply(Observation o) {
  auto key = o.key();
  auto it = index_.find(key);
  if (it == index_.end()) {
    index_.emplace(std::move(key), std::move(o));
  } else if (!it->second.ok) {
    it->second = std::move(o);
  }
}

void ObservationStore::write_record(std::ofstream& out, const Observation& o) {
  const std::string payload = o.to_json().dump();
  const auto len = static_cast<std::uint32_t>(payload.size());
  char prefix[4];
  for (int i = 0; i < 4; ++i) prefix[i] = static_cast<char>((len >> (8 * i)) & 0xFFU);
  out.write(prefix, 4);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed on " + path_.string());
}

bool ObservationStore::append(const Observation& o) {
  std::lock_guard lock(mu_);
  const auto it = index_.find(o.key());
  if (it != index_.end() && it->second.ok) return false;
  write_record(out_, o);
  apply(o);
  return true;
}

bool ObservationStore::completed(const std::string& key) const {
  std::lock_guard lock(mu_);
  const auto it = index_.find(key);
  return it != index_.end() && it->second.ok;
}

bool ObservationStore::has_record(const std::string& key) const {
  std::lock_guard lock(mu_);
  return index_.contains(key);
}

std::vector<Observation> ObservationStore::observations() const {
  std::lock_guard lock(mu_);
  std::vector<Observation> out;
  out.reserve(index_.size());
  for (const auto& [_, o] : index_) out.push_back(o);
  return out;
}

std::size_t ObservationStore::size() const {
  std::lock_guard lock(mu_);
  return index_.size();
}

std::size_t ObservationStore::ok_count() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(index_.begin(), index_.end(), [](const auto& kv) { return kv.second.ok; }));
}

void ObservationStore::compact() {
  std::lock_guard lock(mu_);
  const std::filesystem::path tmp = path_.string() + ".compact";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    for (const auto& [_, o] : index_) write_record(out, o);
  }
  out_.close();
  std::filesystem::rename(tmp, path_);
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorCode::kIo, "cannot reopen store " + path_.string());
}

void ObservationStore::write_snapshot(std::ostream& out) const {
  write_observation_snapshot(out, observations());
}

std::vector<Observation> ObservationStore::read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kNotFound, "store " + path.string() + " does not exist");
  }
  std::vector<Observation> records;
  parse_log(read_all(path), path, records);
  std::map<std::string, Observation> index;
  for (auto& o : records) {
    auto key = o.key();
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(std::move(key), std::move(o));
    } else if (!it->second.ok) {
      it->second = std::move(o);
    }
  }
  std::vector<Observation> out;
  out.reserve(index.size());
  for (auto& [_, o] : index) out.push_back(std::move(o));
  return out;
}

void write_observation_snapshot(std::ostream& out, const std::vector<Observation>& sorted) {
  out << "entity_id\ttemplate_id\ttask_id\tmodel_id\tlanguage\tvariant\tstatus\tpredicted\t"
         "posterior\treason\n";
  for (const auto& o : sorted) {
    std::vector<std::string> p;
    p.reserve(o.posterior.size());
    for (double v : o.posterior) p.push_back(format_double(v));
    out << o.entity_id << '\t' << o.template_id << '\t' << o.config.task_id << '\t'
        << o.config.model_id << '\t' << o.config.language << '\t' << o.config.variant.name()
        << '\t' << (o.ok ? "ok" : "failed") << '\t' << o.predicted << '\t' << join(p, ",")
        << '\t' << o.failure_reason << '\n';
  }
}

}  // namespace entbias
