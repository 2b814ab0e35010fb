#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "msmgn/mesh.hpp"

namespace msmgn {

void write_mesh(std::ostream& out, const TriMesh& mesh) {
  out << "msmesh v1\n" << mesh.node_count() << '\n';
  for (std::size_t i = 0; i < mesh.node_count(); ++i) {
    const Vec2 p = mesh.position(static_cast<int>(i));
    out << fmt::format("{:.17g} {:.17g} {}\n", p.x, p.y, to_string(mesh.kind(static_cast<int>(i))));
  }
  out << mesh.triangle_count() << '\n';
  for (const auto& t : mesh.triangles()) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  out << fmt::format("sizing {:.17g} {:.17g}\n", mesh.edge_min(), mesh.edge_max());
}

TriMesh read_mesh(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "msmesh v1") {
    throw ParseError(fmt::format("expected header 'msmesh v1', got '{}'", line));
  }
  auto fail = [](const std::string& what) { throw ParseError("msmesh: " + what); };
  long long nodes = -1;
  if (!(in >> nodes) || nodes < 0) fail("bad node count");
  std::vector<Vec2> positions(static_cast<std::size_t>(nodes));
  std::vector<NodeKind> kinds(static_cast<std::size_t>(nodes));
  for (auto i = 0LL; i < nodes; ++i) {
    std::string kind;
    if (!(in >> positions[i].x >> positions[i].y >> kind)) fail(fmt::format("bad node line {}", i));
    kinds[i] = parse_node_kind(kind);
  }
  long long tris = -1;
  if (!(in >> tris) || tris < 0) fail("bad triangle count");
  std::vector<TriangleIndices> triangles(static_cast<std::size_t>(tris));
  for (auto t = 0LL; t < tris; ++t) {
    if (!(in >> triangles[t][0] >> triangles[t][1] >> triangles[t][2])) {
      fail(fmt::format("bad triangle line {}", t));
    }
  }
  double edge_min = 0.0, edge_max = 0.0;
  std::string tag;
  if (in >> tag) {
    if (tag != "sizing" || !(in >> edge_min >> edge_max)) fail("bad trailer (expected 'sizing <min> <max>')");
  }
  return TriMesh(std::move(positions), std::move(triangles), std::move(kinds), edge_min, edge_max);
}

void save_mesh(const std::string& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_mesh(out, mesh);
  if (!out) throw IoError("failed writing " + path);
}

TriMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_mesh(in);
}

}  // namespace msmgn
