from derham.cli import main

raise SystemExit(main())
