#include "deduct/error.hpp"
#include "deduct/sim.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>

namespace deduct::sim {

using nlohmann::json;

namespace {

json to_json(const Account& a) {
  json events = json::array();
  for (const auto& e : a.truth.events) {
    events.push_back({{"day", e.day}, {"kind", to_string(e.kind)}, {"amount", e.amount.minor()}});
  }
  json balances = json::array();
  for (Money m : a.truth.daily_balance) balances.push_back(m.minor());
  return json{
      {"id", a.id},
      {"episode_start", a.episode_start},
      {"profile",
       {{"age_bucket", a.profile.age_bucket},
        {"city_tier", a.profile.city_tier},
        {"income_band", a.profile.income_band},
        {"gender", a.profile.gender}}},
      {"activity",
       {{"payments_per_day", a.profile.payments_per_day},
        {"transfers_per_day", a.profile.transfers_per_day}}},
      {"bill", a.truth.bill.minor()},
      {"events", std::move(events)},
      {"daily_balance", std::move(balances)},
  };
}

Account from_json(const json& j) {
  Account a;
  a.id = j.at("id").get<std::uint64_t>();
  a.episode_start = j.at("episode_start").get<int>();
  const auto& p = j.at("profile");
  a.profile.age_bucket = p.at("age_bucket").get<int>();
  a.profile.city_tier = p.at("city_tier").get<int>();
  a.profile.income_band = p.at("income_band").get<int>();
  a.profile.gender = p.at("gender").get<int>();
  const auto& act = j.at("activity");
  a.profile.payments_per_day = act.at("payments_per_day").get<double>();
  a.profile.transfers_per_day = act.at("transfers_per_day").get<double>();
  a.truth.bill = Money::from_minor(j.at("bill").get<std::int64_t>());
  for (const auto& e : j.at("events")) {
    a.truth.events.push_back({e.at("day").get<int>(),
                              event_kind_from_string(e.at("kind").get<std::string>()),
                              Money::from_minor(e.at("amount").get<std::int64_t>())});
  }
  for (const auto& b : j.at("daily_balance")) {
    a.truth.daily_balance.push_back(Money::from_minor(b.get<std::int64_t>()));
  }
  return a;
}

void check_account(const Account& a) {
  if (!a.profile.valid()) throw std::invalid_argument("profile code out of range");
  if (!a.truth.bill.positive()) throw std::invalid_argument("bill must be positive");
  if (a.episode_start < 0 || a.horizon() <= 0) {
    throw std::invalid_argument("episode_start outside daily_balance");
  }
  int prev_day = 0;
  for (const auto& e : a.truth.events) {
    if (!e.amount.positive()) throw std::invalid_argument("event amount must be positive");
    if (e.day < prev_day || e.day >= static_cast<int>(a.truth.daily_balance.size())) {
      throw std::invalid_argument("events must be time-ordered within the timeline");
    }
    prev_day = e.day;
  }
  for (Money b : a.truth.daily_balance) {
    if (b < Money()) throw std::invalid_argument("negative balance");
  }
}

}  // namespace

void write_dataset(const Dataset& ds, std::ostream& out) {
  for (const auto& a : ds.accounts) out << to_json(a).dump() << '\n';
}

Dataset read_dataset(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      Account a = from_json(json::parse(line));
      check_account(a);
      ds.accounts.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed dataset record: ") + e.what(), line_no);
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("invalid dataset record: ") + e.what(), line_no);
    }
  }
  return ds;
}

void export_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_dataset(ds, out);
  if (!out) throw IoError("write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_dataset(in);
}

}  // namespace deduct::sim
